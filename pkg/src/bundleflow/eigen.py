"""Small dense eigen-decomposition and finite-difference Jacobians.

Dense matrices here never exceed order 2m (at most a few dozen rows), so a
direct LAPACK decomposition is used behind a deterministic ordering and a
residual check.  There is no iterative fallback: a residual above tolerance
is reported, never silently truncated.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import sha256

import numpy as np

__all__ = ["SmallMatrix", "Spectrum", "EigenError", "eigen_small", "fd_jacobian"]

MAX_ORDER = 64
DEGENERATE_TOL = 1e-9


class EigenError(RuntimeError):
    """Eigen-decomposition failed or did not meet the residual contract."""


@dataclass(frozen=True, eq=False)
class SmallMatrix:
    """A dense real square matrix of small order."""

    order: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.order, self.order):
            raise ValueError(f"expected a {self.order}x{self.order} array, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ValueError("matrix entries must be finite")
        e = e.copy()
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @classmethod
    def from_array(cls, a) -> "SmallMatrix":
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square array, got shape {a.shape}")
        return cls(order=a.shape[0], entries=a)


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues sorted by (Re, Im) with matching unit eigenvectors.

    Eigenvalues of real-symmetric input are plain floats; otherwise complex
    entries may appear.  ``degenerate_flags[i]`` marks |Re lambda_i| < 1e-9.
    """

    eigenvalues: tuple
    eigenvectors: tuple
    degenerate_flags: tuple

    def real_parts(self) -> np.ndarray:
        return np.array([complex(l).real for l in self.eigenvalues])


def _deterministic_phase(v: np.ndarray) -> np.ndarray:
    """Rotate an eigenvector so its largest-magnitude entry is positive real."""
    k = int(np.argmax(np.abs(v)))
    pivot = v[k]
    if pivot == 0:
        return v
    w = v * (abs(pivot) / pivot)
    if not np.iscomplexobj(v):
        w = w.real
    return w


def eigen_small(mat: SmallMatrix) -> Spectrum:
    """Full eigen-decomposition of a small dense matrix.

    Ordering is by (real part, imaginary part) ascending so downstream
    reports are byte-reproducible.  Real symmetric input goes through the
    symmetric solver and yields exactly real eigenvalues.
    """
    if mat.order > MAX_ORDER:
        raise ValueError(f"order {mat.order} exceeds the supported maximum {MAX_ORDER}")
    a = mat.entries
    symmetric = np.array_equal(a, a.T)
    try:
        if symmetric:
            lams, vecs = np.linalg.eigh(a)
        else:
            lams, vecs = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        digest = sha256(a.tobytes()).hexdigest()[:16]
        raise EigenError(f"decomposition did not converge (matrix sha256 {digest})") from exc

    order = np.lexsort((lams.imag, lams.real)) if np.iscomplexobj(lams) else np.argsort(lams)
    lams = lams[order]
    vecs = vecs[:, order]

    scale = np.linalg.norm(a)
    out_vals, out_vecs, flags = [], [], []
    for i in range(mat.order):
        v = vecs[:, i]
        v = v / np.linalg.norm(v)
        v = _deterministic_phase(v)
        lam = lams[i]
        residual = np.linalg.norm(a @ v - lam * v)
        if residual > 1e-9 * max(scale, 1e-300):
            digest = sha256(a.tobytes()).hexdigest()[:16]
            raise EigenError(
                f"residual {residual:.3e} exceeds tolerance for eigenvalue {lam} "
                f"(matrix sha256 {digest})"
            )
        if np.iscomplexobj(lams) and lam.imag == 0:
            lam = lam.real
        out_vals.append(complex(lam) if np.iscomplexobj(np.asarray(lam)) else float(lam))
        out_vecs.append(tuple(v))
        flags.append(abs(complex(lam).real) < DEGENERATE_TOL)
    return Spectrum(
        eigenvalues=tuple(out_vals),
        eigenvectors=tuple(out_vecs),
        degenerate_flags=tuple(flags),
    )


def fd_jacobian(f, p, h: float) -> SmallMatrix:
    """Central-difference Jacobian of a vector field; entrywise error O(h^2)."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    p = np.asarray(p, dtype=float)
    k = len(p)
    cols = []
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        fp = np.asarray(f(p + e), dtype=float)
        fm = np.asarray(f(p - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"field evaluation failed inside the stencil at column {j}")
        cols.append((fp - fm) / (2 * h))
    return SmallMatrix.from_array(np.column_stack(cols))
