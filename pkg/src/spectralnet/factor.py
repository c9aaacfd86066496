"""Iterated principal-axis factoring with regression factor scores.

The reduced correlation matrix (communalities on the diagonal) is
eigendecomposed repeatedly; the top ``n_factors`` eigenpairs give the loadings
and their row sums of squares the next communality estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# above this condition number the correlation matrix is treated as singular
SINGULAR_COND = 1e12


class FactorAnalysisError(RuntimeError):
    def __init__(self, message: str, delta: float | None = None):
        super().__init__(message)
        self.delta = delta


@dataclass
class FactorModel:
    loadings: np.ndarray  # (R, B)
    uniquenesses: np.ndarray  # (R,)
    communalities: np.ndarray  # (R,)
    eigenvalues: np.ndarray  # (B,) sums of squared loadings
    score_weights: np.ndarray  # (R, B); scores = Z @ score_weights
    iterations: int
    converged_delta: float
    heywood_bands: list[int] = field(default_factory=list)

    def residual(self, corr: np.ndarray) -> np.ndarray:
        return corr - (self.loadings @ self.loadings.T + np.diag(self.uniquenesses))


def correlation(z: np.ndarray) -> np.ndarray:
    """Correlation of the columns of an already standardised (mean 0, var 1) matrix."""
    n = z.shape[0]
    r = (z.T @ z) / n
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)
    return r


def _is_singular(r: np.ndarray) -> bool:
    try:
        return not np.isfinite(np.linalg.cond(r)) or np.linalg.cond(r) > SINGULAR_COND
    except np.linalg.LinAlgError:
        return True


def initial_communalities(r: np.ndarray) -> np.ndarray:
    """Squared multiple correlations, or max |off-diagonal r| per band if ``r`` is singular."""
    if not _is_singular(r):
        return 1.0 - 1.0 / np.diag(np.linalg.inv(r))
    off = np.abs(r - np.diag(np.diag(r)))
    return off.max(axis=1)


def principal_axis(
    r: np.ndarray,
    n_factors: int,
    tol: float = 1e-4,
    max_iter: int = 100,
) -> FactorModel:
    nvar = r.shape[0]
    if r.shape != (nvar, nvar):
        raise ValueError("correlation matrix must be square")
    if not 1 <= n_factors < nvar:
        raise ValueError(f"need 1 <= n_factors < {nvar}, got {n_factors}")

    h2 = initial_communalities(r)
    heywood: set[int] = set()
    delta = np.inf
    for it in range(1, max_iter + 1):
        reduced = r.copy()
        np.fill_diagonal(reduced, h2)
        vals, vecs = np.linalg.eigh(reduced)
        top = np.argsort(vals)[::-1][:n_factors]
        vals = np.clip(vals[top], 0.0, None)
        loadings = vecs[:, top] * np.sqrt(vals)
        new_h2 = (loadings**2).sum(axis=1)
        over = np.flatnonzero(new_h2 > 1.0)
        if over.size:
            heywood.update(over.tolist())
            new_h2 = np.minimum(new_h2, 1.0)
        delta = float(np.max(np.abs(new_h2 - h2)))
        h2 = new_h2
        if delta < tol:
            break
    else:
        raise FactorAnalysisError(
            f"principal-axis factoring did not converge in {max_iter} iterations "
            f"(last max communality change {delta:.3g})",
            delta=delta,
        )

    # deterministic sign: largest-magnitude loading of each factor is positive
    pivots = np.abs(loadings).argmax(axis=0)
    signs = np.sign(loadings[pivots, np.arange(n_factors)])
    signs[signs == 0] = 1.0
    loadings = loadings * signs
    if heywood:
        warnings.warn(f"Heywood case: communality clamped to 1 for bands {sorted(heywood)}")

    if _is_singular(r):
        weights = np.linalg.pinv(r) @ loadings
    else:
        weights = np.linalg.solve(r, loadings)
    return FactorModel(
        loadings=loadings,
        uniquenesses=1.0 - h2,
        communalities=h2,
        eigenvalues=(loadings**2).sum(axis=0),
        score_weights=weights,
        iterations=it,
        converged_delta=delta,
        heywood_bands=sorted(heywood),
    )


def factor_scores(z: np.ndarray, model: FactorModel) -> np.ndarray:
    """Regression-method scores for standardised observations ``z`` (n, R)."""
    return z @ model.score_weights
