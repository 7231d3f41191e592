"""Document-level entity disambiguation.

Entity vectors are bootstrapped from word co-occurrence counts, a local
attention model scores candidates against their context, and a
fully-connected pairwise CRF is resolved by a fixed number of damped
max-product message-passing layers that the training loss backpropagates
through.
"""

__version__ = "0.1.0"

from .errors import ValidationError

__all__ = ["ValidationError", "__version__"]
