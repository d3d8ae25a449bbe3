"""Bundle parameters and phase-space state containers.

The flows studied here live on connection-type metrics over a product of
m quaternionic Kaehler factors with dimensions 4*n_i and Einstein constants
Lambda_i.  Everything downstream is parametrized by the derived constants
q_i = Lambda_i / (n_i + 2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BundleParams",
    "GeneralParams",
    "StateXY",
    "make_params",
    "general_params",
]


@dataclass(frozen=True)
class BundleParams:
    """Base/fibre data (m, n_i, Lambda_i) with the derived q_i."""

    m: int
    n: tuple[int, ...]
    lam: tuple[float, ...]
    q: tuple[float, ...]

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"need at least two factors, got m={self.m}")
        if len(self.n) != self.m or len(self.lam) != self.m or len(self.q) != self.m:
            raise ValueError("n, lam, q must all have length m")
        if any(ni < 1 for ni in self.n):
            raise ValueError(f"quaternionic dimensions must satisfy n_i >= 1, got {self.n}")
        if any(li <= 0 for li in self.lam):
            # Nonpositive Lambda signals the pseudo-Riemannian regime,
            # which is out of scope.
            raise ValueError(f"Einstein constants must be positive, got {self.lam}")


def make_params(m: int, n, lam) -> BundleParams:
    """Build BundleParams with q_i = Lambda_i/(n_i+2); rejects invalid input."""
    n = tuple(int(v) for v in n)
    lam = tuple(float(v) for v in lam)
    if len(n) != m or len(lam) != m:
        raise ValueError(
            f"dimension mismatch: m={m} but len(n)={len(n)}, len(lambda)={len(lam)}"
        )
    q = tuple(li / (ni + 2) for ni, li in zip(n, lam))
    return BundleParams(m=m, n=n, lam=lam, q=q)


@dataclass(frozen=True)
class GeneralParams:
    """Equal-dimension data for the m >= 3 system.

    All factors share n_k = d and the normalization Lambda_k = d + 2,
    so q_k = 1.
    """

    m: int
    d: int

    def __post_init__(self):
        if self.m < 3:
            raise ValueError(f"the general system needs m >= 3, got m={self.m}")
        if self.d < 1:
            raise ValueError(f"quaternionic dimension must satisfy d >= 1, got d={self.d}")

    @property
    def lam(self) -> float:
        return float(self.d + 2)


def general_params(m: int, d: int) -> GeneralParams:
    """Build GeneralParams for the equal-dimension normalized system."""
    return GeneralParams(m=int(m), d=int(d))


SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class StateXY:
    """Simplex-constrained state (X, Y) for the m >= 3 system.

    X_k = a_k/a_hat must sum to 1; Y_k = a_hat/b_k must be positive.
    """

    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have equal length")
        drift = abs(sum(self.x) - 1.0)
        if drift > SIMPLEX_TOL:
            raise ValueError(f"simplex constraint violated: |sum(X)-1| = {drift:.3e}")
        if any(v <= 0 for v in self.x) or any(v <= 0 for v in self.y):
            raise ValueError("X and Y components must be positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y]).astype(float)

    @classmethod
    def from_vector(cls, z: np.ndarray) -> "StateXY":
        m = len(z) // 2
        return cls(x=tuple(float(v) for v in z[:m]), y=tuple(float(v) for v in z[m:]))
