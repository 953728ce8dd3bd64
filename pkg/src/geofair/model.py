"""Ridge regression with an unpenalized intercept and k-fold penalty selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream
from .errors import ClassError, DimensionError, SingularityError

DEFAULT_LAMBDA_GRID = tuple(float(v) for v in np.logspace(-4, 4, 9))


@dataclass(frozen=True)
class RidgeFit:
    """Affine predictor ``intercept + (x - feature_means) @ weights``."""

    weights: np.ndarray
    intercept: float
    lam: float
    feature_means: np.ndarray
    label_mean: float

    @property
    def d(self) -> int:
        return len(self.weights)


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-d, got shape {X.shape}")
    if X.shape[0] != len(y):
        raise DimensionError(f"X has {X.shape[0]} rows but y has {len(y)} entries")
    if len(y) < 2:
        raise ValueError(f"need at least 2 rows, got {len(y)}")
    return X, y


def fit_ridge(X, y, lam: float) -> RidgeFit:
    """Minimize ``sum((y - b - X @ beta)**2) + lam * |beta|**2``.

    Solved on centered data. When there are more features than rows and
    ``lam > 0`` the equivalent n-by-n dual system is solved instead.
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    means = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - means
    yc = y - y_mean
    n, d = Xc.shape
    if lam == 0:
        rank = np.linalg.matrix_rank(Xc)
        if rank < d:
            raise SingularityError(f"centered X has rank {rank} < {d}; use lambda > 0")
        beta = np.linalg.solve(Xc.T @ Xc, Xc.T @ yc)
    elif d > n:
        beta = Xc.T @ np.linalg.solve(Xc @ Xc.T + lam * np.eye(n), yc)
    else:
        beta = np.linalg.solve(Xc.T @ Xc + lam * np.eye(d), Xc.T @ yc)
    return RidgeFit(beta, y_mean, float(lam), means, y_mean)


def predict(fit: RidgeFit, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.d:
        raise DimensionError(f"expected {fit.d} feature columns, got shape {X.shape}")
    return fit.intercept + (X - fit.feature_means) @ fit.weights


def normal_equation_residual(fit: RidgeFit, X, y) -> float:
    """Relative residual of the centered normal equations at the fitted weights."""
    X, y = _check_xy(X, y)
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    lhs = Xc.T @ (Xc @ fit.weights) + fit.lam * fit.weights
    rhs = Xc.T @ yc
    scale = max(np.linalg.norm(rhs), np.linalg.norm(Xc.T @ (Xc @ fit.weights)), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / scale)


def fold_assignment(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    perm = stream(seed, "folds").permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def _ridge_path(Xc: np.ndarray, yc: np.ndarray, grid) -> list[np.ndarray]:
    # all penalties from one SVD of the centered training fold
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    uty = U.T @ yc
    tol = s.max(initial=0.0) * max(Xc.shape) * np.finfo(float).eps
    out = []
    for lam in grid:
        denom = s**2 + lam
        coef = np.where(s > tol, s / np.where(denom > 0, denom, 1.0), 0.0)
        out.append(Vt.T @ (coef * uty))
    return out


def cross_validate(X, y, lambda_grid=DEFAULT_LAMBDA_GRID, k: int = 3, seed: int = 0) -> tuple[float, dict[float, float]]:
    """Pick the penalty with the lowest mean validation MSE over seeded folds.

    Ties go to the larger penalty. Returns ``(best_lambda, {lambda: mean_mse})``.
    """
    X, y = _check_xy(X, y)
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(v < 0 for v in grid):
        raise ValueError("lambda grid entries must be nonnegative")
    folds = fold_assignment(len(y), k, seed)
    mse = np.zeros(len(grid))
    for fold in folds:
        if len(fold) < 1:
            raise ValueError("a cross-validation fold is empty")
        train = np.ones(len(y), dtype=bool)
        train[fold] = False
        means = X[train].mean(axis=0)
        y_mean = y[train].mean()
        betas = _ridge_path(X[train] - means, y[train] - y_mean, grid)
        Xv = X[fold] - means
        for j, beta in enumerate(betas):
            mse[j] += np.mean((y[fold] - y_mean - Xv @ beta) ** 2)
    mse /= len(folds)
    table = {lam: float(m) for lam, m in zip(grid, mse)}
    best = min(grid, key=lambda lam: (table[lam], -lam))
    return best, table


def fit_ridge_cv(X, y, lambda_grid=DEFAULT_LAMBDA_GRID, k: int = 3, seed: int = 0) -> tuple[RidgeFit, dict[float, float]]:
    best, table = cross_validate(X, y, lambda_grid, k, seed)
    return fit_ridge(X, y, best), table


def fit_urban_scorer(X, u, lambda_grid=DEFAULT_LAMBDA_GRID, k: int = 3, seed: int = 0) -> RidgeFit:
    """Ridge on 0/1 urban indicators; the raw scores are used for ranking."""
    u = np.asarray(u)
    labels = u.astype(float)
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("urban labels must be binary")
    if labels.min() == labels.max():
        raise ClassError("urban scorer needs both urban and rural training regions")
    fit, _ = fit_ridge_cv(X, labels, lambda_grid, k, seed)
    return fit


def clipped_scores(scores) -> np.ndarray:
    """Scores clipped to [0, 1] for reporting as probabilities."""
    return np.clip(np.asarray(scores, dtype=float), 0.0, 1.0)
