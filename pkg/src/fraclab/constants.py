"""Closed-form constants for the critical / subcritical problems, with quadrature oracles.

All constants are dimensionless and depend only on (n, s).  Bubble integrals
``int (1 + |x|^2)^(-alpha) dx`` appear inside c_0, c_1, c_2 and b; the closed
form ``pi^(n/2) Gamma(alpha - n/2) / Gamma(alpha)`` is cross-checked by
``bubble_integral_oracle``, which never touches the Gamma function.

Two constants admit more than one plausible reading, so every variant is
evaluated and labeled:

* ``c2_literal`` / ``d_literal`` use pi^(n/s) where the radial integral gives
  pi^(n/2); ``c2`` / ``d_pi_corrected`` use pi^(n/2).
* ``d_amplitude_corrected`` additionally converts the bubble amplitude factor
  from ``c^(-4s/(n-2s))`` to ``c^(-2n/(n-2s))``, which is what the global
  Pohozaev balance gives when the blow-up rate is measured with ||u||_inf.
* ``g`` uses the prefactor ``4n/(2 C_s)``; ``g_prefactor_alt`` reads it as
  ``(4n/2) C_s``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate
from scipy.special import beta, gamma

# |S^{n-1}| written out so the oracle is independent of Gamma
_SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}


class ConstantsError(ValueError):
    """Parameters outside the range where a constant is defined."""


def sphere_area(n: int) -> float:
    """|S^{n-1}|."""
    return 2.0 * math.pi ** (n / 2) / gamma(n / 2)


def bubble_integral(n: int, alpha: float) -> float:
    """Closed form of int_{R^n} (1 + |x|^2)^(-alpha) dx."""
    if 2 * alpha <= n:
        raise ConstantsError(f"integral diverges: 2*alpha={2 * alpha} <= n={n}")
    return math.pi ** (n / 2) * gamma(alpha - n / 2) / gamma(alpha)


def bubble_integral_oracle(n: int, alpha: float, radius: float = 8.0, tail_terms: int = 60) -> float:
    """Radial quadrature of int_{R^n} (1 + |x|^2)^(-alpha) dx.

    Adaptive Gauss-Kronrod on (0, radius] plus the tail expanded as
    ``sum_j binom(-alpha, j) R^(n - 2 alpha - 2j) / (2 alpha + 2j - n)``.
    """
    if n not in _SPHERE_AREA:
        raise ConstantsError(f"oracle supports n in {{1, 2, 3}}, got {n}")
    if 2 * alpha <= n:
        raise ConstantsError(f"integral diverges: 2*alpha={2 * alpha} <= n={n}")
    f = lambda r: r ** (n - 1) * (1.0 + r * r) ** (-alpha)
    pieces = np.concatenate([[0.0], np.geomspace(1e-3, radius, 24)])
    core = sum(
        integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=200)[0] for a, b in zip(pieces[:-1], pieces[1:])
    )
    tail = 0.0
    coeff = 1.0
    for j in range(tail_terms):
        tail += coeff * radius ** (n - 2 * alpha - 2 * j) / (2 * alpha + 2 * j - n)
        coeff *= (-alpha - j) / (j + 1)
    return _SPHERE_AREA[n] * (core + tail)


@dataclass(frozen=True)
class ConstantSet:
    n: int
    s: float
    p: float
    S: float
    C_s: float
    a: float
    c: float
    b: float
    c0: float
    c1: float
    c2: float | None
    c2_literal: float | None
    D: float
    E: float
    d_literal: float | None
    d_pi_corrected: float | None
    d_amplitude_corrected: float | None
    g: float
    g_prefactor_alt: float
    note: str = ""

    def d_variants(self) -> dict:
        return {
            "literal": self.d_literal,
            "pi_corrected": self.d_pi_corrected,
            "amplitude_corrected": self.d_amplitude_corrected,
        }

    def g_variants(self) -> dict:
        return {"literal": self.g, "prefactor_alt": self.g_prefactor_alt}

    def to_dict(self) -> dict:
        return asdict(self)


def closed_form_constants(n: int, s: float) -> ConstantSet:
    if n not in (1, 2, 3):
        raise ConstantsError(f"n must be 1, 2 or 3, got {n}")
    if not 0 < s < 1:
        raise ConstantsError(f"s={s} must lie in (0, 1)")
    if n <= 2 * s:
        raise ConstantsError(f"need n > 2s, got n={n}, s={s}")
    m = n - 2 * s
    p = (n + 2 * s) / m
    area = sphere_area(n)
    S = 2**-s * math.pi ** (-s / 2) * math.sqrt(gamma(m / 2) / gamma((n + 2 * s) / 2)) * (gamma(n) / gamma(n / 2)) ** (s / n)
    C_s = 2 ** (1 - 2 * s) * gamma(1 - s) / gamma(s)
    a = 2 ** (1 - 2 * s) * gamma(m / 2) / (area * gamma(n / 2) * gamma(s))
    # 2^(m/2) folded into the power keeps c exact at half-integer cases such as (2, 1/2)
    c = (2 ** (2 * s) * gamma((n + 2 * s) / 2) / gamma(m / 2)) ** (m / (4 * s))
    b = area / 2 * gamma(s) * gamma(n / 2) / gamma((n + 2 * s) / 2) * c ** (p + 1)
    c0 = c ** (p + 1) * bubble_integral(n, n / 2 * (p + 1) * m / n)
    c1 = c**p * bubble_integral(n, m / 2 * p)
    D = area / 2 * beta(1 - s, n / 2)
    E = area / (2 * n) * (beta(1 - s, n / 2) - beta(2 - s, n / 2))
    g = 4 * n / (2 * C_s) * S ** (n / s) * D * a * b**2
    g_alt = 4 * n / 2 * C_s * S ** (n / s) * D * a * b**2
    note = ""
    if n > 4 * s:
        ratio = gamma(n / 2 - 2 * s) / gamma(n - 2 * s)
        c2 = c**2 * math.pi ** (n / 2) * ratio
        c2_lit = c**2 * math.pi ** (n / s) * ratio
        core = m**2 / (2 * s * C_s) * D * a * b**2 / ratio
        d_lit = core / math.pi ** (n / s) * c ** (-4 * s / m)
        d_pi = core / math.pi ** (n / 2) * c ** (-4 * s / m)
        d_amp = core / math.pi ** (n / 2) * c ** (-2 * n / m)
    else:
        c2 = c2_lit = d_lit = d_pi = d_amp = None
        note = f"n <= 4s: c_2 and d undefined (int w^2 diverges for n={n}, s={s})"
    return ConstantSet(
        n=n, s=s, p=p, S=S, C_s=C_s, a=a, c=c, b=b, c0=c0, c1=c1, c2=c2, c2_literal=c2_lit,
        D=D, E=E, d_literal=d_lit, d_pi_corrected=d_pi, d_amplitude_corrected=d_amp,
        g=g, g_prefactor_alt=g_alt, note=note,
    )


def oracle_constants(n: int, s: float) -> dict:
    """c_0, c_1, c_2 and b rebuilt from ``bubble_integral_oracle``.

    Only the amplitude c_{n,s} is shared with the closed forms.
    """
    m = n - 2 * s
    p = (n + 2 * s) / m
    c = closed_form_constants(n, s).c
    out = {
        "c0": c ** (p + 1) * bubble_integral_oracle(n, m / 2 * (p + 1)),
        "c1": c**p * bubble_integral_oracle(n, m / 2 * p),
    }
    out["b"] = c * out["c1"]
    out["c2"] = c**2 * bubble_integral_oracle(n, m) if n > 4 * s else None
    return out
