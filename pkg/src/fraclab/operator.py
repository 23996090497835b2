"""Fractional powers of the discrete Dirichlet Laplacian."""
import numpy as np

from fraclab.grid import SpectralBasis


def critical_exponent(n: int, s: float) -> float:
    """p = (n + 2s) / (n - 2s)."""
    if not 0 < s < 1:
        raise ValueError(f"s={s} must lie in (0, 1)")
    if n <= 2 * s:
        raise ValueError(f"need n > 2s, got n={n}, s={s}")
    return (n + 2 * s) / (n - 2 * s)


def apply_power(basis: SpectralBasis, u, sigma: float) -> np.ndarray:
    """Apply (-Delta_h)^sigma: multiply each eigen-coefficient by lambda_k^sigma."""
    if abs(sigma) > 2:
        raise ValueError(f"|sigma|={abs(sigma)} exceeds the sanity bound 2")
    return basis.apply_spectral(u, basis.eigenvalues**sigma)


def energy(basis: SpectralBasis, u, s: float) -> float:
    """<A_s u, u> = ||A_s^{1/2} u||^2 in the weighted inner product."""
    a = basis.analyze(u)
    return float(np.sum(basis.eigenvalues**s * a * a))


def sobolev_quotient(basis: SpectralBasis, u, s: float) -> float:
    """||A_s^{1/2} u||_2^2 / ||u||_{p+1}^2 with p the critical exponent of (n, s).

    At a bubble on R^n the value is S_{n,s}^{-2}; it is invariant under u -> c u.
    """
    u = np.asarray(u, dtype=float)
    if not np.any(u):
        raise ValueError("quotient undefined for u = 0")
    p = critical_exponent(basis.grid.ndim, s)
    w = basis.grid.weight
    denom = (w * np.sum(np.abs(u) ** (p + 1))) ** (2.0 / (p + 1))
    return energy(basis, u, s) / denom
