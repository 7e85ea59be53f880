"""Numeric kernel backend selection.

The compiled extension wins on the small per-subproblem kernels that
dominate branch-and-bound (scalar loops beat NumPy dispatch overhead on
10x64-sized operands), while the batched attack kernels are faster in
NumPy (BLAS beats scalar loops on 128-row batches).  The default
routing uses each where it wins.

Override with FAVEX_KERNELS=reference|native|auto (native forces the
compiled extension for everything, e.g. for parity tests).
"""

import os

from . import reference

try:
    from . import _native
except ImportError:
    _native = None

_choice = os.environ.get("FAVEX_KERNELS", "auto").lower()

if _choice == "reference" or (_choice == "auto" and _native is None):
    BACKEND = "reference"
    _node_impl = reference
    _batch_impl = reference
elif _choice == "auto":
    BACKEND = "native"
    _node_impl = _native
    _batch_impl = reference
elif _choice == "native":
    if _native is None:
        raise ImportError(
            "FAVEX_KERNELS=native but the compiled kernels are not built; "
            "reinstall with a working C toolchain or unset FAVEX_KERNELS"
        )
    BACKEND = "native"
    _node_impl = _native
    _batch_impl = _native
else:
    raise ValueError(f"unknown FAVEX_KERNELS value: {_choice!r}")

affine_interval = _node_impl.affine_interval
relu_backward_lower = _node_impl.relu_backward_lower
linear_box_lower = _node_impl.linear_box_lower
forward_batch = _batch_impl.forward_batch

if _node_impl is _batch_impl:
    margin_grad_batch = _batch_impl.margin_grad_batch
else:
    def margin_grad_batch(weights, biases, xs, y):
        # single-point margin checks run per branch-and-bound node, where
        # the compiled loop wins; larger batches come from the attacks,
        # where BLAS wins
        impl = _node_impl if len(xs) <= 8 else _batch_impl
        return impl.margin_grad_batch(weights, biases, xs, y)
