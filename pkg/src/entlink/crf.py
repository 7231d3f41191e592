"""Document-level joint disambiguation with a fully-connected pairwise CRF.

The joint score of an assignment is the sum of per-mention context scores
plus pairwise entity coherence terms 2/(n-1) * x_e^T diag(C) x_e'.  MAP
inference is approximated by T synchronous max-product message-passing
layers with damping delta; per-mention beliefs are softmax-normalised and
combined with the log prior by the same network f as the local model.
Training backpropagates a margin ranking loss on the combined beliefs
through all T layers.

Two implementations of the same recurrence live here: a vectorised numpy
path for inference, and a tape path whose gradients reach A, B, C and the
f network.  Messages are stored dense over a padded candidate axis; padded
slots (and the unused diagonal) carry -inf and never receive gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import (
    FNet,
    LocalParams,
    MentionInstance,
    argmax_entity,
    combine_scores_tape,
    context_matrix,
    floored_log_prior,
    hinge_rank_loss_tape,
    make_param_vars,
    mention_unary,
    mention_unary_tape,
)
from .errors import ValidationError
from .vectors import EmbeddingStore

MESSAGE_NORM_TOL = 1e-6


@dataclass
class GlobalParams:
    """Local scorer parameters plus the coherence diagonal and LBP controls."""

    local: LocalParams
    c: np.ndarray
    delta: float = 0.5
    t: int = 10

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValidationError(f"damping must be in (0, 1], got {self.delta}")
        if self.t < 1:
            raise ValidationError(f"layer count must be >= 1, got {self.t}")

    @classmethod
    def init(cls, dim: int, hidden: int = 100, k: int = 100, r: int = 25,
             delta: float = 0.5, t: int = 10) -> "GlobalParams":
        return cls(local=LocalParams.init(dim, hidden=hidden, k=k, r=r),
                   c=np.ones(dim), delta=delta, t=t)

    def copy(self) -> "GlobalParams":
        return GlobalParams(local=self.local.copy(), c=self.c.copy(),
                            delta=self.delta, t=self.t)

    def param_dict(self) -> dict[str, np.ndarray]:
        out = self.local.param_dict()
        out["C"] = self.c
        return out

    def load_param_dict(self, params: dict[str, np.ndarray]) -> None:
        self.local.load_param_dict(params)
        self.c = params["C"]


@dataclass
class CrfInstance:
    """One document's inference problem: unaries, candidates, coherence diagonal."""

    unaries: list[np.ndarray]        # per mention, length S_i
    cand_vecs: list[np.ndarray]      # per mention, (S_i, d)
    entities: list[list[int]]        # per mention candidate entity ids
    log_priors: list[np.ndarray]     # per mention, length S_i
    c: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("a CRF instance needs at least one mention")
        for psi in self.unaries:
            if psi.shape[0] == 0:
                raise ValidationError("every mention needs a nonempty candidate set")

    @property
    def n(self) -> int:
        return len(self.unaries)

    @property
    def pair_scale(self) -> float:
        # no pairs exist for n=1; the factor is never used then
        return 2.0 / (self.n - 1) if self.n > 1 else 0.0

    def phi(self, i: int, j: int) -> np.ndarray:
        """Pairwise scores, rows over the candidates of j, columns over i.

        Computed once per unordered pair and transposed for the reverse
        direction, so phi(i, j) == phi(j, i).T holds bit-exactly.
        """
        if i < j:
            return (self.pair_scale
                    * (self.cand_vecs[j] * self.c) @ self.cand_vecs[i].T)
        return self.phi(j, i).T

    def padded(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Candidate tensor (n,S,d), unary matrix (n,S), validity mask (n,S)."""
        n = self.n
        s = max(psi.shape[0] for psi in self.unaries)
        d = self.cand_vecs[0].shape[1]
        vecs = np.zeros((n, s, d))
        psi = np.zeros((n, s))
        valid = np.zeros((n, s), dtype=bool)
        for i in range(n):
            si = self.unaries[i].shape[0]
            vecs[i, :si] = self.cand_vecs[i]
            psi[i, :si] = self.unaries[i]
            valid[i, :si] = True
        return vecs, psi, valid


def crf_score(assignment: list[int], instance: CrfInstance) -> float:
    """Joint log-score of one full assignment (candidate indices per mention)."""
    if len(assignment) != instance.n:
        raise ValidationError("assignment length does not match mention count")
    for i, a in enumerate(assignment):
        if not 0 <= a < instance.unaries[i].shape[0]:
            raise ValidationError(
                f"assignment entity index {a} not in candidate set of mention {i}")
    total = sum(float(instance.unaries[i][assignment[i]]) for i in range(instance.n))
    for i in range(instance.n):
        for j in range(i + 1, instance.n):
            total += float(instance.phi(i, j)[assignment[j], assignment[i]])
    return total


@dataclass
class MessageState:
    """Normalized log-messages m[i, j, :] from i to j over j's candidates.

    Padded slots and the diagonal are -inf; exp of every valid message
    vector sums to 1.
    """

    messages: np.ndarray
    layer: int


def init_messages(instance: CrfInstance) -> MessageState:
    """Layer-0 state: uniform normalized messages (zero unnormalised form)."""
    n = instance.n
    sizes = [psi.shape[0] for psi in instance.unaries]
    s = max(sizes)
    messages = np.full((n, n, s), -np.inf)
    for i in range(n):
        for j in range(n):
            if i != j:
                messages[i, j, :sizes[j]] = -np.log(sizes[j])
    return MessageState(messages=messages, layer=0)


def _phi_tensor(instance: CrfInstance) -> np.ndarray:
    vecs, _, _ = instance.padded()
    return instance.pair_scale * np.einsum("jpd,d,iqd->ijpq", vecs, instance.c, vecs)


def _step(messages: np.ndarray, psi0: np.ndarray, valid: np.ndarray,
          phi: np.ndarray, delta: float) -> np.ndarray:
    """One synchronous damped max-product layer on padded arrays."""
    finite = np.isfinite(messages)
    m0 = np.where(finite, messages, 0.0)
    # pre[i, e'] = psi_i(e') + sum_k mbar[k -> i](e')
    pre = psi0 + m0.sum(axis=0)
    # v[i, j, e'] = pre[i, e'] - mbar[j -> i](e')
    v = pre[:, None, :] - m0.transpose(1, 0, 2)
    scores = phi + v[:, :, None, :]
    scores = np.where(valid[:, None, None, :], scores, -np.inf)
    new = scores.max(axis=3)  # (n, n, S_j): unnormalised messages i -> j
    # normalise over j's valid candidates
    keep = valid[None, :, :]
    mx = np.where(keep, new, -np.inf).max(axis=2, keepdims=True)
    ex = np.where(keep, np.exp(new - mx), 0.0)
    y = ex / ex.sum(axis=2, keepdims=True)
    prev_mix = np.where(finite, np.exp(messages), 0.0)
    mix = delta * y + (1.0 - delta) * prev_mix
    with np.errstate(divide="ignore"):
        out = np.where(finite, np.log(mix), -np.inf)
    return out


def lbp_step(state: MessageState, instance: CrfInstance, delta: float,
             validate: bool = True) -> MessageState:
    """Advance the message state by one layer (synchronous update)."""
    _, psi0, valid = instance.padded()
    phi = _phi_tensor(instance)
    messages = _step(state.messages, psi0, valid, phi, delta)
    out = MessageState(messages=messages, layer=state.layer + 1)
    if validate:
        validate_messages(out, instance)
    return out


def validate_messages(state: MessageState, instance: CrfInstance) -> None:
    n = instance.n
    finite = np.isfinite(state.messages)
    totals = np.where(finite, np.exp(np.where(finite, state.messages, 0.0)),
                      0.0).sum(axis=2)
    offdiag = ~np.eye(n, dtype=bool)
    bad = offdiag & (np.abs(totals - 1.0) > MESSAGE_NORM_TOL)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValidationError(
            f"message {i}->{j} at layer {state.layer} sums to {totals[i, j]!r}")


def run_lbp(instance: CrfInstance, t: int, delta: float,
            validate: bool = True) -> MessageState:
    """T damped max-product layers from the zero (uniform) state."""
    if t < 1:
        raise ValidationError(f"layer count must be >= 1, got {t}")
    state = init_messages(instance)
    if instance.n == 1:
        return state  # no pairs: message passing is a no-op
    _, psi0, valid = instance.padded()
    phi = _phi_tensor(instance)
    messages = state.messages
    for layer in range(t):
        messages = _step(messages, psi0, valid, phi, delta)
        if validate:
            validate_messages(MessageState(messages, layer + 1), instance)
    return MessageState(messages=messages, layer=t)


def beliefs(state: MessageState, instance: CrfInstance) -> list[np.ndarray]:
    """Per-mention normalized beliefs after message passing."""
    out = []
    finite = np.isfinite(state.messages)
    m0 = np.where(finite, state.messages, 0.0)
    incoming = m0.sum(axis=0)
    for i in range(instance.n):
        si = instance.unaries[i].shape[0]
        mu = instance.unaries[i] + incoming[i, :si]
        ex = np.exp(mu - mu.max())
        out.append(ex / ex.sum())
    return out


def combine_rho(fnet: FNet, belief: np.ndarray, log_priors: np.ndarray) -> np.ndarray:
    """Final marginal score: f applied to (normalized belief, log prior)."""
    x = np.column_stack([belief, log_priors])
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite input to the combination network")
    return fnet.forward(x)


def build_crf_instance(doc, params: GlobalParams,
                       store: EmbeddingStore) -> tuple[CrfInstance | None, list[int]]:
    """Inference instance over the document's candidate-bearing mentions.

    Returns the instance and the positions of the included mentions;
    mentions without candidates stay unannotated.
    """
    idxs = [k for k, m in enumerate(doc.mentions) if m.candidates]
    if not idxs:
        return None, []
    unaries, cand_vecs, entities, log_priors = [], [], [], []
    for k in idxs:
        mention = doc.mentions[k]
        vecs = np.stack([store.entity_vec(c.entity) for c in mention.candidates])
        ctx = context_matrix(mention, store)
        psi, _ = mention_unary(params.local, vecs, ctx)
        unaries.append(psi)
        cand_vecs.append(vecs)
        entities.append([c.entity for c in mention.candidates])
        log_priors.append(np.array([floored_log_prior(c.prior)
                                    for c in mention.candidates]))
    instance = CrfInstance(unaries=unaries, cand_vecs=cand_vecs,
                           entities=entities, log_priors=log_priors, c=params.c)
    return instance, idxs


def instance_marginals(instance: CrfInstance, params: GlobalParams,
                       validate: bool = True) -> list[np.ndarray]:
    """Combined marginal scores rho per mention (inference path)."""
    if instance.n == 1:
        mu = [np.exp(instance.unaries[0] - instance.unaries[0].max())]
        mu[0] = mu[0] / mu[0].sum()
    else:
        state = run_lbp(instance, params.t, params.delta, validate=validate)
        mu = beliefs(state, instance)
    return [combine_rho(params.local.fnet, mu[i], instance.log_priors[i])
            for i in range(instance.n)]


def predict_global(doc, params: GlobalParams, store: EmbeddingStore,
                   validate: bool = True) -> list[int | None]:
    """Joint marginals per document, then independent per-mention argmax."""
    instance, idxs = build_crf_instance(doc, params, store)
    out: list[int | None] = [None] * len(doc.mentions)
    if instance is None:
        return out
    rho = instance_marginals(instance, params, validate=validate)
    for pos, k in enumerate(idxs):
        out[k] = argmax_entity(rho[pos], instance.entities[pos])
    return out


# -- tape (training) path ----------------------------------------------


def global_mubars_tape(tape: ad.Tape, vars_: dict[str, ad.Var],
                       instances: list[MentionInstance], r: int, delta: float,
                       t: int) -> list[ad.Var]:
    """Differentiable per-mention beliefs after T unrolled layers.

    Messages for all ordered mention pairs live in one padded (n, n, S)
    tensor per layer.  Dead slots (padding and the diagonal) carry log 1 =
    0, so sums over senders need no masking; the max over the sender's
    candidates and the per-pair softmax mask explicitly.
    """
    n = len(instances)
    psi_vars = []
    for inst in instances:
        if inst.ctx_vecs.shape[0] == 0:
            psi_vars.append(tape.const(np.zeros(inst.cand_vecs.shape[0])))
        else:
            psi_vars.append(mention_unary_tape(tape, vars_, inst.cand_vecs,
                                               inst.ctx_vecs, r))
    if n == 1:
        return [ad.softmax(psi_vars[0])]

    sizes = [inst.cand_vecs.shape[0] for inst in instances]
    s = max(sizes)
    d = instances[0].cand_vecs.shape[1]
    vecs = np.zeros((n, s, d))
    valid = np.zeros((n, s), dtype=bool)
    for i, inst in enumerate(instances):
        vecs[i, :sizes[i]] = inst.cand_vecs
        valid[i, :sizes[i]] = True
    offdiag = ~np.eye(n, dtype=bool)
    receiver_keep = offdiag[:, :, None] & valid[None, :, :]

    psi_pad = ad.pad_stack(psi_vars, s)
    phi = ad.scale(ad.bilinear_pairs(vecs, vars_["C"]), 2.0 / (n - 1))

    mbar0 = np.zeros((n, n, s))
    mix0 = np.ones((n, n, s))
    for i in range(n):
        for j in range(n):
            if i != j:
                mbar0[i, j, :sizes[j]] = -np.log(sizes[j])
                mix0[i, j, :sizes[j]] = 1.0 / sizes[j]
    mbar = tape.const(mbar0)
    mix_prev = tape.const(mix0)

    for _ in range(t):
        pre = ad.add(psi_pad, ad.sum_over_senders(mbar))
        v = ad.pair_differences(pre, mbar)
        unnorm = ad.maxplus_pairs(phi, v, valid)
        y = ad.masked_softmax_rows(unnorm, receiver_keep)
        mix = ad.add(ad.scale(y, delta), ad.scale(mix_prev, 1.0 - delta))
        mbar = ad.log(mix)
        mix_prev = mix

    mu = ad.add(psi_pad, ad.sum_over_senders(mbar))
    return [ad.softmax(ad.row_slice(mu, i, sizes[i])) for i in range(n)]


def global_doc_loss_tape(tape: ad.Tape, vars_: dict[str, ad.Var], fnet: FNet,
                         instances: list[MentionInstance], gamma: float,
                         r: int, delta: float, t: int) -> ad.Var:
    """Ranking loss on combined beliefs, backpropagated through all layers.

    All candidate-bearing mentions shape the messages; only mentions whose
    gold entity sits in their candidate set contribute hinge terms.
    """
    zero = tape.const(np.zeros(()))
    if not instances:
        return zero
    mubars = global_mubars_tape(tape, vars_, instances, r, delta, t)
    total = None
    for i, inst in enumerate(instances):
        if inst.gold_index is None:
            continue
        scores = combine_scores_tape(tape, vars_, fnet, mubars[i], inst.log_priors)
        loss = hinge_rank_loss_tape(tape, scores, inst.gold_index, gamma)
        total = loss if total is None else ad.add(total, loss)
    return total if total is not None else zero


def global_loss_closure(instances: list[MentionInstance], fnet_shape: FNet,
                        gamma: float, r: int, delta: float, t: int):
    """(params, need_grad) -> (loss, grads) for the gradient checker."""

    def f(params: dict[str, np.ndarray], need_grad: bool):
        tape = ad.Tape()
        vars_ = make_param_vars(tape, params)
        loss = global_doc_loss_tape(tape, vars_, fnet_shape, instances,
                                    gamma, r, delta, t)
        if not need_grad:
            return float(loss.value), None
        tape.backward(loss)
        grads = {name: (v.grad if v.grad is not None else np.zeros_like(v.value))
                 for name, v in vars_.items()}
        return float(loss.value), grads

    return f
