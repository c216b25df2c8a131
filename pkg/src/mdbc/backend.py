"""Selects the chain-runner implementation at import time.

The compiled kernel (``mdbc._kernels``) is preferred when it imported
cleanly; otherwise the pure-Python reference takes over. Both produce
bit-identical results. Set ``MDBC_NO_KERNELS=1`` to force the fallback
(used by the benchmark and the equivalence tests).
"""

from __future__ import annotations

import os

from . import _chain_ref

_kernels = None
if os.environ.get("MDBC_NO_KERNELS", "0") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[no-redef]
    except ImportError:
        _kernels = None

HAVE_KERNELS = _kernels is not None


def gmm_chain(spec, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints):
    """Dispatch a GMM chain run to the active backend."""
    if _kernels is not None:
        return _kernels.gmm_chain(
            theta0, spec.n_components, spec.dim, uniforms, normals,
            n_train, eta0, schedule_offset, clip, checkpoints,
        )
    return _chain_ref.gmm_chain_ref(
        spec, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints
    )


def gmm_chain_fallback(spec, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints):
    """Always run the pure-Python reference (for equivalence checks)."""
    return _chain_ref.gmm_chain_ref(
        spec, theta0, uniforms, normals, n_train, eta0, schedule_offset, clip, checkpoints
    )


generic_chain = _chain_ref.generic_chain
