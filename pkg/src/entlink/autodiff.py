"""Reverse-mode automatic differentiation over scalars and small dense arrays.

Define-by-run: every primitive appends one record to a Tape as it computes
its primal, and `Tape.backward` replays the records in exact reverse order,
summing adjoints into each operand.  A fresh tape is built per training
example; there is no graph caching.

Conventions (fixed for reproducibility):

* argmax-style subgradients route the full adjoint to the first maximal
  index;
* relu gradient at exactly 0 is 0;
* softmax and logsumexp subtract the running maximum before exponentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError


class Tape:
    """Append-only record of primitive operations, replayed backwards."""

    def __init__(self):
        self._records: list[tuple[Var, Callable[[np.ndarray], None]]] = []

    def var(self, value, needs_grad: bool = True) -> "Var":
        arr = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("non-finite primal value")
        return Var(arr, self, needs_grad)

    def const(self, value) -> "Var":
        return self.var(value, needs_grad=False)

    def _record(self, out: "Var", backward: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: "Var", check_finite: bool = True) -> None:
        """Accumulate d(root)/d(node) into every node's .grad."""
        if root.value.shape != ():
            raise ValidationError("backward root must be a scalar")
        root.grad = np.ones((), dtype=np.float64)
        for out, fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            if check_finite and not np.all(np.isfinite(g)):
                raise ValidationError("non-finite adjoint during backward pass")
            fn(g)


class Var:
    """A value on a tape: primal array plus (after backward) its adjoint."""

    __slots__ = ("value", "grad", "tape", "needs_grad")

    def __init__(self, value: np.ndarray, tape: Tape, needs_grad: bool):
        self.value = value
        self.grad: np.ndarray | None = None
        self.tape = tape
        self.needs_grad = needs_grad

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    @property
    def shape(self):
        return self.value.shape


def _out(tape: Tape, value: np.ndarray, inputs: tuple[Var, ...],
         backward: Callable[[np.ndarray, Var], None] | None = None) -> Var:
    if not np.all(np.isfinite(value)):
        raise ValidationError("non-finite primal value")
    out = Var(value, tape, needs_grad=any(v.needs_grad for v in inputs))
    if out.needs_grad and backward is not None:
        tape._record(out, backward)
    return out


def _binary_grad(x: Var, g: np.ndarray) -> None:
    # Handles the scalar-vs-array broadcast used by the elementwise ops.
    if x.value.shape == g.shape:
        x._accum(g)
    elif x.value.shape == ():
        x._accum(np.sum(g))
    else:
        raise ValidationError(f"cannot reduce adjoint {g.shape} onto {x.value.shape}")


def _check_broadcast(a: Var, b: Var) -> None:
    if a.value.shape != b.value.shape and a.value.shape != () and b.value.shape != ():
        raise ValidationError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")


def add(a: Var, b: Var) -> Var:
    _check_broadcast(a, b)

    def backward(g):
        _binary_grad(a, g)
        _binary_grad(b, g)

    return _out(a.tape, a.value + b.value, (a, b), backward)


def sub(a: Var, b: Var) -> Var:
    _check_broadcast(a, b)

    def backward(g):
        _binary_grad(a, g)
        _binary_grad(b, -g)

    return _out(a.tape, a.value - b.value, (a, b), backward)


def mul(a: Var, b: Var) -> Var:
    _check_broadcast(a, b)

    def backward(g):
        _binary_grad(a, g * b.value)
        _binary_grad(b, g * a.value)

    return _out(a.tape, a.value * b.value, (a, b), backward)


def scale_by_diagonal(diag: Var, x: Var) -> Var:
    """Apply a diagonal matrix, stored as its diagonal vector: diag * x."""
    return mul(diag, x)


def neg(a: Var) -> Var:
    def backward(g):
        a._accum(-g)

    return _out(a.tape, -a.value, (a,), backward)


def scale(a: Var, c: float) -> Var:
    def backward(g):
        a._accum(g * c)

    return _out(a.tape, a.value * c, (a,), backward)


def shift(a: Var, c: float) -> Var:
    def backward(g):
        a._accum(g)

    return _out(a.tape, a.value + c, (a,), backward)


def dot(a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape or a.value.ndim != 1:
        raise ValidationError(f"dot expects equal vectors, got {a.value.shape} vs {b.value.shape}")

    def backward(g):
        a._accum(g * b.value)
        b._accum(g * a.value)

    return _out(a.tape, np.dot(a.value, b.value), (a, b), backward)


def relu(a: Var) -> Var:
    mask = a.value > 0.0  # gradient at exactly 0 is 0

    def backward(g):
        a._accum(g * mask)

    return _out(a.tape, np.where(mask, a.value, 0.0), (a,), backward)


def exp(a: Var) -> Var:
    value = np.exp(a.value)

    def backward(g):
        a._accum(g * value)

    return _out(a.tape, value, (a,), backward)


def log(a: Var) -> Var:
    if np.any(a.value <= 0.0):
        raise ValidationError("log of non-positive value")

    def backward(g):
        a._accum(g / a.value)

    return _out(a.tape, np.log(a.value), (a,), backward)


def sum_(a: Var) -> Var:
    def backward(g):
        a._accum(np.full_like(a.value, g))

    return _out(a.tape, np.sum(a.value), (a,), backward)


def index(a: Var, i: int) -> Var:
    if a.value.ndim != 1 or not 0 <= i < a.value.shape[0]:
        raise ValidationError(f"index {i} invalid for shape {a.value.shape}")

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[i] += g

    return _out(a.tape, a.value[i], (a,), backward)


def max_over(a: Var) -> Var:
    """Max of a vector; adjoint routed to the first maximal index."""
    if a.value.ndim != 1 or a.value.shape[0] == 0:
        raise ValidationError("max_over expects a nonempty vector")
    arg = int(np.argmax(a.value))

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[arg] += g

    return _out(a.tape, a.value[arg], (a,), backward)


def softmax(a: Var) -> Var:
    """Stable softmax over a vector; -inf inputs get exactly zero mass."""
    if a.value.ndim != 1 or a.value.shape[0] == 0:
        raise ValidationError("softmax expects a nonempty vector")
    m = np.max(a.value)
    if m == -np.inf:
        raise ValidationError("empty reduced context")
    ex = np.exp(a.value - m)
    y = ex / np.sum(ex)

    def backward(g):
        a._accum(y * (g - np.dot(g, y)))

    return _out(a.tape, y, (a,), backward)


def logsumexp(a: Var) -> Var:
    if a.value.ndim != 1 or a.value.shape[0] == 0:
        raise ValidationError("logsumexp expects a nonempty vector")
    m = np.max(a.value)
    if m == -np.inf:
        raise ValidationError("empty reduced context")
    ex = np.exp(a.value - m)
    s = np.sum(ex)
    y = ex / s

    def backward(g):
        a._accum(g * y)

    return _out(a.tape, m + np.log(s), (a,), backward)


def masked_fill(a: Var, keep: np.ndarray) -> Var:
    """Set entries where `keep` is False to -inf; they carry zero gradient."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != a.value.shape:
        raise ValidationError(f"mask shape {keep.shape} != value shape {a.value.shape}")
    value = np.where(keep, a.value, -np.inf)

    def backward(g):
        a._accum(np.where(keep, g, 0.0))

    # -inf primal is intentional here, so bypass the finite check.
    out = Var(value, a.tape, needs_grad=a.needs_grad)
    if out.needs_grad:
        a.tape._record(out, backward)
    return out


def matvec(m: Var, v: Var) -> Var:
    if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
        raise ValidationError(f"matvec shapes {m.value.shape} @ {v.value.shape}")

    def backward(g):
        if m.needs_grad:
            m._accum(np.outer(g, v.value))
        if v.needs_grad:
            v._accum(m.value.T @ g)

    return _out(m.tape, m.value @ v.value, (m, v), backward)


def linear(x: Var, w: Var, b: Var) -> Var:
    """Affine layer on row-stacked inputs: x @ w.T + b."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.value.shape[1] != w.value.shape[1]:
        raise ValidationError(f"linear shapes {x.value.shape}, {w.value.shape}")

    def backward(g):
        if x.needs_grad:
            x._accum(g @ w.value)
        if w.needs_grad:
            w._accum(g.T @ x.value)
        if b.needs_grad:
            b._accum(np.sum(g, axis=0))

    return _out(x.tape, x.value @ w.value.T + b.value, (x, w, b), backward)


def bilinear_diag(left: Var, diag: Var, right: Var) -> Var:
    """Pairwise scores left[i]^T diag(d) right[j], returned as a matrix."""
    if left.value.ndim != 2 or right.value.ndim != 2 or diag.value.ndim != 1:
        raise ValidationError("bilinear_diag expects (p,d), (d,), (q,d)")
    if left.value.shape[1] != diag.value.shape[0] or right.value.shape[1] != diag.value.shape[0]:
        raise ValidationError("bilinear_diag dimension mismatch")
    value = (left.value * diag.value) @ right.value.T

    def backward(g):
        if diag.needs_grad:
            diag._accum(((left.value.T @ g) * right.value.T).sum(axis=1))
        if left.needs_grad:
            left._accum(g @ (right.value * diag.value))
        if right.needs_grad:
            right._accum(g.T @ (left.value * diag.value))

    return _out(left.tape, value, (left, diag, right), backward)


def max_over_rows(m: Var) -> Var:
    """Column-wise max of a matrix; adjoint goes to the first argmax row."""
    if m.value.ndim != 2 or m.value.shape[0] == 0:
        raise ValidationError("max_over_rows expects a nonempty matrix")
    args = np.argmax(m.value, axis=0)
    cols = np.arange(m.value.shape[1])

    def backward(g):
        if m.grad is None:
            m.grad = np.zeros_like(m.value)
        np.add.at(m.grad, (args, cols), g)

    return _out(m.tape, m.value[args, cols], (m,), backward)


def maxplus(m: Var, v: Var) -> Var:
    """Row-wise max-plus product: out[i] = max_j (m[i,j] + v[j])."""
    if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
        raise ValidationError(f"maxplus shapes {m.value.shape}, {v.value.shape}")
    scores = m.value + v.value[None, :]
    args = np.argmax(scores, axis=1)
    rows = np.arange(m.value.shape[0])

    def backward(g):
        if m.needs_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.value)
            np.add.at(m.grad, (rows, args), g)
        if v.needs_grad:
            if v.grad is None:
                v.grad = np.zeros_like(v.value)
            np.add.at(v.grad, args, g)

    return _out(m.tape, scores[rows, args], (m, v), backward)


def transpose(m: Var) -> Var:
    def backward(g):
        m._accum(g.T)

    return _out(m.tape, m.value.T.copy(), (m,), backward)


def stack_cols(a: Var, b: Var) -> Var:
    """Two equal-length vectors as the columns of an (n, 2) matrix."""
    if a.value.shape != b.value.shape or a.value.ndim != 1:
        raise ValidationError("stack_cols expects two equal-length vectors")

    def backward(g):
        if a.needs_grad:
            a._accum(g[:, 0])
        if b.needs_grad:
            b._accum(g[:, 1])

    return _out(a.tape, np.column_stack([a.value, b.value]), (a, b), backward)


def flatten(m: Var) -> Var:
    shape = m.value.shape

    def backward(g):
        m._accum(g.reshape(shape))

    return _out(m.tape, m.value.reshape(-1), (m,), backward)


# -- batched message-passing primitives ---------------------------------
#
# These operate on the padded pairwise tensors of the unrolled inference
# network: mbar has shape (n, n, S) with entry [i, j, :] the message from
# mention i to mention j over j's padded candidate slots.  Invalid slots
# (padding and the diagonal) carry neutral values (0 in log space, 1 in
# probability space) so that sums over senders ignore them without any
# -inf arithmetic; consumers mask them explicitly.


def pad_stack(vecs: list[Var], width: int) -> Var:
    """Stack variable-length vectors into a zero-padded (n, width) matrix."""
    if not vecs:
        raise ValidationError("pad_stack needs at least one vector")
    tape = vecs[0].tape
    sizes = [v.value.shape[0] for v in vecs]
    if max(sizes) > width:
        raise ValidationError("pad_stack width smaller than a row")
    value = np.zeros((len(vecs), width))
    for i, v in enumerate(vecs):
        value[i, :sizes[i]] = v.value

    def backward(g):
        for i, v in enumerate(vecs):
            if v.needs_grad:
                v._accum(g[i, :sizes[i]])

    return _out(tape, value, tuple(vecs), backward)


def bilinear_pairs(vecs: np.ndarray, diag: Var) -> Var:
    """All pairwise bilinear scores of padded candidate vectors.

    `vecs` is a constant (n, S, d) tensor; the output (n, n, S, S) holds
    out[i, j, p, q] = vecs[j, p] . diag * vecs[i, q], the coherence between
    candidate p of mention j and candidate q of mention i.
    """
    value = np.einsum("jpd,d,iqd->ijpq", vecs, diag.value, vecs)

    def backward(g):
        diag._accum(np.einsum("ijpq,jpd,iqd->d", g, vecs, vecs))

    return _out(diag.tape, value, (diag,), backward)


def sum_over_senders(m: Var) -> Var:
    """Total incoming message per mention: (n, n, S) -> (n, S) over axis 0."""

    def backward(g):
        m._accum(np.broadcast_to(g, m.value.shape))

    return _out(m.tape, m.value.sum(axis=0), (m,), backward)


def pair_differences(pre: Var, mbar: Var) -> Var:
    """v[i, j, :] = pre[i, :] - mbar[j, i, :] (sender's slots, minus backflow)."""

    def backward(g):
        if pre.needs_grad:
            pre._accum(g.sum(axis=1))
        if mbar.needs_grad:
            mbar._accum(-g.transpose(1, 0, 2))

    value = pre.value[:, None, :] - mbar.value.transpose(1, 0, 2)
    return _out(pre.tape, value, (pre, mbar), backward)


def maxplus_pairs(phi: Var, v: Var, sender_valid: np.ndarray) -> Var:
    """out[i, j, p] = max over valid q of phi[i, j, p, q] + v[i, j, q].

    The max runs over the sender's valid candidate slots; the adjoint is
    routed to the first maximal q of each (i, j, p) cell.
    """
    scores = phi.value + v.value[:, :, None, :]
    masked = np.where(sender_valid[:, None, None, :], scores, -np.inf)
    args = masked.argmax(axis=3)
    value = np.take_along_axis(masked, args[..., None], axis=3)[..., 0]
    ii, jj, pp = np.indices(args.shape, sparse=False)

    def backward(g):
        if phi.needs_grad:
            if phi.grad is None:
                phi.grad = np.zeros_like(phi.value)
            np.add.at(phi.grad, (ii, jj, pp, args), g)
        if v.needs_grad:
            if v.grad is None:
                v.grad = np.zeros_like(v.value)
            np.add.at(v.grad, (ii, jj, args), g)

    out = Var(value, phi.tape, needs_grad=phi.needs_grad or v.needs_grad)
    if out.needs_grad:
        phi.tape._record(out, backward)
    return out


def masked_softmax_rows(m: Var, keep: np.ndarray) -> Var:
    """Softmax over the last axis restricted to `keep`; dead slots become 1.

    Rows with no kept slot (the diagonal) also come out as all ones, so a
    later elementwise log turns every dead slot into a neutral 0.
    """
    if keep.shape != m.value.shape:
        raise ValidationError("mask shape mismatch")
    shifted = np.where(keep, m.value, -np.inf)
    mx = shifted.max(axis=-1, keepdims=True)
    ex = np.where(keep, np.exp(shifted - np.where(np.isfinite(mx), mx, 0.0)), 0.0)
    total = ex.sum(axis=-1, keepdims=True)
    safe_total = np.where(total > 0.0, total, 1.0)
    y = ex / safe_total
    value = np.where(keep, y, 1.0)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        m._accum(np.where(keep, y * (g - inner), 0.0))

    return _out(m.tape, value, (m,), backward)


def row_slice(mat: Var, i: int, size: int) -> Var:
    """One mention's valid slots out of a padded matrix row."""
    if not 0 <= i < mat.value.shape[0] or size > mat.value.shape[1]:
        raise ValidationError("row_slice out of bounds")

    def backward(g):
        if mat.grad is None:
            mat.grad = np.zeros_like(mat.value)
        mat.grad[i, :size] += g

    return _out(mat.tape, mat.value[i, :size].copy(), (mat,), backward)


# -- finite-difference checking ----------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter comparison of tape adjoints against central differences."""

    max_rel_err: dict[str, float] = field(default_factory=dict)
    worst_coord: dict[str, tuple[int, ...]] = field(default_factory=dict)
    skipped: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    checked: int = 0

    def overall_max(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    def ok(self, tolerance: float) -> bool:
        return self.overall_max() < tolerance


def grad_check(
    f: Callable[..., tuple[float, dict[str, np.ndarray] | None]],
    params: dict[str, np.ndarray],
    epsilon: float = 1e-6,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss against central differences.

    ``f(params, need_grad)`` must rebuild its tape from the given parameter
    arrays and return ``(value, grads)``, where `grads` holds one array per
    parameter when `need_grad` is true and may be None otherwise.

    Coordinates sitting on a kink (hinge boundary, relu corner, max tie
    within epsilon) are reported and skipped: a subgradient cannot match a
    finite difference there.  Kinks are told apart from curvature by how
    the one-sided slope mismatch scales with epsilon: a derivative jump
    keeps |d+ - d-| constant as epsilon shrinks, smooth curvature shrinks
    it proportionally.  Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if epsilon <= 0.0:
        raise ValidationError("epsilon must be positive")
    value0, grads = f(params, True)
    if grads is None:
        raise ValidationError("grad_check requires analytic gradients from f")
    if not np.isfinite(value0):
        raise ValidationError("non-finite loss at the probe point")
    rng = rng if rng is not None else np.random.default_rng(0)
    report = GradCheckReport()

    def probe(flat, c, eps):
        orig = flat[c]
        flat[c] = orig + eps
        up, _ = f(params, False)
        flat[c] = orig - eps
        down, _ = f(params, False)
        flat[c] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValidationError("non-finite loss at a finite-difference probe")
        d_plus = (up - value0) / eps
        d_minus = (value0 - down) / eps
        return d_plus, d_minus, (up - down) / (2.0 * eps)

    for name, base in params.items():
        grad = grads[name]
        flat = base.reshape(-1)
        n_coords = flat.shape[0]
        if coords_per_param is not None and coords_per_param < n_coords:
            coords = np.sort(rng.choice(n_coords, size=coords_per_param, replace=False))
        else:
            coords = np.arange(n_coords)
        worst = 0.0
        worst_coord: tuple[int, ...] = ()
        for c in coords:
            d_plus, d_minus, numeric = probe(flat, c, epsilon)
            coord = tuple(np.unravel_index(c, base.shape))
            gap = abs(d_plus - d_minus)
            if gap > 1e-7 * max(1.0, abs(d_plus), abs(d_minus)):
                d_plus2, d_minus2, numeric2 = probe(flat, c, epsilon / 4.0)
                if abs(d_plus2 - d_minus2) > gap / 2.0:
                    # mismatch survives the smaller step: derivative jump
                    report.skipped.append((name, coord))
                    continue
                numeric = numeric2  # curvature: the tighter step is cleaner
            analytic = grad.reshape(-1)[c]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if max(abs(analytic), abs(numeric)) < 1e-7:
                rel = 0.0  # both below finite-difference resolution
            report.checked += 1
            if rel > worst:
                worst = rel
                worst_coord = coord
        report.max_rel_err[name] = worst
        report.worst_coord[name] = worst_coord
    return report
