"""Backend selection for the extension kernels.

The compiled ``_kernels`` module is used when it was built; otherwise the
numpy fallback is used. Set ``FRACLAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("FRACLAB_PURE_PYTHON", "") not in ("", "0"):
    from fraclab import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from fraclab import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        from fraclab import _kernels_py as _impl

        BACKEND = "python"

bessel_k_scaled = _impl.bessel_k_scaled
rho = _impl.rho
drho = _impl.drho
mode_sum = _impl.mode_sum
MODE_CUTOFF = _impl.MODE_CUTOFF

__all__ = ["BACKEND", "bessel_k_scaled", "rho", "drho", "mode_sum", "MODE_CUTOFF"]
