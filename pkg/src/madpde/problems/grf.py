"""Gaussian random fields with power-law spectra.

Fields are truncated Fourier series whose coefficients are independent
zero-mean Gaussians.  The per-mode standard deviation follows the
covariance operator scale*(-Lap + shift*I)^(-exponent): on the periodic
unit interval the Laplacian eigenvalue of mode k is (2*pi*k)^2, on the
unit circle it is k^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GrfSpec:
    """Spectrum parameters; domain is "interval" or "circle"."""

    scale: float
    shift: float
    exponent: float
    max_mode: int
    domain: str = "interval"

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError("GrfSpec: scale must be positive")
        if not (np.isfinite(self.shift) and self.shift > 0):
            raise ValueError("GrfSpec: shift must be positive")
        if not (np.isfinite(self.exponent) and self.exponent > 0):
            raise ValueError("GrfSpec: exponent must be positive")
        if self.max_mode < 1:
            raise ValueError("GrfSpec: max_mode must be >= 1")
        if self.domain not in ("interval", "circle"):
            raise ValueError(f"GrfSpec: unknown domain {self.domain!r}")

    @property
    def angular_frequency(self) -> float:
        # Basis functions are cos/sin(angular_frequency * k * x).
        return 2.0 * np.pi if self.domain == "interval" else 1.0

    @property
    def period(self) -> float:
        return 1.0 if self.domain == "interval" else 2.0 * np.pi

    def mode_std(self, k) -> np.ndarray:
        """Standard deviation of each Fourier coefficient at mode k."""
        k = np.asarray(k, dtype=np.float64)
        eig = (self.angular_frequency * k) ** 2
        return np.sqrt(self.scale) * (eig + self.shift) ** (-self.exponent / 2.0)


# u0 law for the viscous Burgers family and the wider-spectrum variant
# used to stress extrapolation; boundary-data law for the Laplace family.
BURGERS_U0_SPEC = GrfSpec(scale=100.0, shift=9.0, exponent=3.0, max_mode=64)
BURGERS_U0_EXTRAPOLATION_SPEC = GrfSpec(scale=100.0, shift=25.0, exponent=2.5, max_mode=64)
CIRCLE_BOUNDARY_SPEC = GrfSpec(scale=10.0 ** 1.5, shift=100.0, exponent=3.0,
                               max_mode=32, domain="circle")


@dataclass(frozen=True)
class GrfSample:
    """One draw: coefficients [a0, a1, b1, ..., a_K, b_K] plus evaluator."""

    spec: GrfSpec
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.shape != (1 + 2 * self.spec.max_mode,):
            raise ValueError("GrfSample: coefficient count does not match spec")
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.arange(1, self.spec.max_mode + 1)
        ang = self.spec.angular_frequency * np.multiply.outer(x, k)
        out = (self.coeffs[0]
               + np.cos(ang) @ self.coeffs[1::2]
               + np.sin(ang) @ self.coeffs[2::2])
        return out


def grf_sample(spec: GrfSpec, rng: np.random.Generator) -> GrfSample:
    """Draw one field; a single flat normal draw keeps replay simple."""
    k = np.arange(1, spec.max_mode + 1)
    stds = np.empty(1 + 2 * spec.max_mode)
    stds[0] = spec.mode_std(0)
    stds[1::2] = spec.mode_std(k)
    stds[2::2] = stds[1::2]
    coeffs = rng.standard_normal(stds.shape[0]) * stds
    return GrfSample(spec, coeffs)
