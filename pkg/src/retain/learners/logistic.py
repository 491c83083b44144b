"""Logistic regression by damped Newton steps with stepwise AIC term selection."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..featurize import Dataset, Encoder

SEPARATION_RIDGE = 1e-6
GRAD_TOL = 1e-8
WEIGHT_LIMIT = 30.0
TOP_FOR_PAIRS = 8

Term = tuple[str, ...]


class SeparationWarning(UserWarning):
    """Data are (quasi-)separable; an L2 ridge was added to keep weights finite."""


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def nll(Z: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = 0.0) -> float:
    """Negative Bernoulli log-likelihood plus ``ridge/2 * |w[1:]|^2``."""
    z = Z @ w
    val = float(np.sum(np.logaddexp(0.0, z) - y * z))
    return val + 0.5 * ridge * float(w[1:] @ w[1:])


def nll_gradient(Z: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    g = Z.T @ (sigmoid(Z @ w) - y)
    g[1:] += ridge * w[1:]
    return g


def nll_hessian(Z: np.ndarray, w: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    p = sigmoid(Z @ w)
    H = Z.T @ (Z * (p * (1.0 - p))[:, None])
    H[np.diag_indices_from(H)] += np.r_[0.0, np.full(len(w) - 1, ridge)]
    return H


def _solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


@dataclass
class NewtonResult:
    w: np.ndarray
    nll: float
    history: list[float]
    converged: bool
    ridge: float


def fit_newton(
    Z: np.ndarray,
    y: np.ndarray,
    w0: np.ndarray | None = None,
    ridge: float = 0.0,
    tol: float = GRAD_TOL,
    max_iter: int = 100,
) -> NewtonResult:
    """Newton iterations with step halving, so the objective never increases.

    Stops when the gradient of the mean objective has norm <= ``tol``.
    """
    n, k = Z.shape
    y = y.astype(float)
    w = np.zeros(k) if w0 is None else np.asarray(w0, dtype=float).copy()
    f = nll(Z, y, w, ridge)
    history = [f]
    for _ in range(max_iter):
        g = nll_gradient(Z, y, w, ridge)
        if np.linalg.norm(g) / n <= tol:
            return NewtonResult(w, f, history, True, ridge)
        step = _solve(nll_hessian(Z, w, ridge), g)
        t = 1.0
        for _ in range(60):
            cand = w - t * step
            fc = nll(Z, y, cand, ridge)
            if fc <= f:
                break
            t *= 0.5
        else:
            # no descent at machine precision: already at the optimum
            return NewtonResult(w, f, history, np.linalg.norm(g) / n <= 1e-6, ridge)
        w, f = cand, fc
        history.append(f)
    g = nll_gradient(Z, y, w, ridge)
    return NewtonResult(w, f, history, bool(np.linalg.norm(g) / n <= tol), ridge)


def _separated(res: NewtonResult, Z: np.ndarray, y: np.ndarray) -> bool:
    if not res.converged or np.any(np.abs(res.w[1:]) > WEIGHT_LIMIT):
        return True
    # a strictly separating linear predictor means no finite maximum exists
    return Z.shape[1] > 1 and bool(np.all((Z @ res.w > 0) == (y == 1)))


def fit_or_ridge(Z: np.ndarray, y: np.ndarray, w0=None) -> NewtonResult:
    """Unpenalized fit, falling back to a tiny ridge on separation."""
    res = fit_newton(Z, y, w0)
    if _separated(res, Z, y):
        res = fit_newton(Z, y, None, ridge=SEPARATION_RIDGE, max_iter=500)
    return res


def term_name(term: Term) -> str:
    return ":".join(term)


def design(X: np.ndarray, columns: list[str], terms: list[Term]) -> np.ndarray:
    """Intercept column followed by one column per term (products for pairs)."""
    pos = {c: j for j, c in enumerate(columns)}
    Z = np.ones((X.shape[0], len(terms) + 1))
    for k, term in enumerate(terms, start=1):
        col = X[:, pos[term[0]]].copy()
        for extra in term[1:]:
            col *= X[:, pos[extra]]
        Z[:, k] = col
    return Z


@dataclass
class LinearModel:
    terms: list[Term]
    weights: np.ndarray
    std_errors: np.ndarray
    aic: float
    loglik: float
    columns: list[str]
    ridge: float = 0.0
    history: list[float] = field(default_factory=list)
    steps: list[str] = field(default_factory=list)
    encoder: Encoder | None = None
    family: str = field(default="lr", init=False)

    def score(self, data: Dataset) -> np.ndarray:
        # row-wise reduction: a row's score does not depend on its position
        return sigmoid(np.sum(design(data.X, self.columns, self.terms) * self.weights, axis=1))

    def coefficients(self) -> list[tuple[str, float, float]]:
        names = ["(intercept)"] + [term_name(t) for t in self.terms]
        return [(n, float(w), float(s)) for n, w, s in zip(names, self.weights, self.std_errors)]

    def params(self) -> dict:
        return {
            "terms": [list(t) for t in self.terms],
            "weights": self.weights.tolist(),
            "std_errors": self.std_errors.tolist(),
            "aic": self.aic,
            "loglik": self.loglik,
            "ridge": self.ridge,
            "steps": list(self.steps),
        }

    @classmethod
    def from_params(cls, p: dict, columns, encoder=None) -> LinearModel:
        return cls(
            terms=[tuple(t) for t in p["terms"]],
            weights=np.asarray(p["weights"], dtype=float),
            std_errors=np.asarray(p["std_errors"], dtype=float),
            aic=float(p["aic"]),
            loglik=float(p["loglik"]),
            columns=list(columns),
            ridge=float(p.get("ridge", 0.0)),
            steps=list(p.get("steps", [])),
            encoder=encoder,
        )


def _aic(res: NewtonResult, Z: np.ndarray, y: np.ndarray) -> float:
    # AIC uses the unpenalized likelihood even when a ridge was needed
    return 2.0 * Z.shape[1] + 2.0 * nll(Z, y, res.w)


def interaction_pool(data: Dataset, top: int = TOP_FOR_PAIRS) -> list[Term]:
    """Pairs among the ``top`` columns ranked by single-term AIC."""
    y = data.y.astype(float)
    scored = []
    for j, c in enumerate(data.columns):
        if np.ptp(data.X[:, j]) == 0:
            continue
        Z = design(data.X, data.columns, [(c,)])
        scored.append((_aic(fit_or_ridge(Z, y), Z, y), j, c))
    scored.sort()
    best = sorted(scored[:top], key=lambda s: s[1])
    return [(a[2], b[2]) for a, b in itertools.combinations(best, 2)]


def _fit_terms(data: Dataset, terms: list[Term], w0=None) -> tuple[NewtonResult, float]:
    Z = design(data.X, data.columns, terms)
    y = data.y.astype(float)
    res = fit_or_ridge(Z, y, w0)
    return res, _aic(res, Z, y)


def _finish(data: Dataset, terms: list[Term], res: NewtonResult, aic: float, steps: list[str]) -> LinearModel:
    Z = design(data.X, data.columns, terms)
    H = nll_hessian(Z, res.w, res.ridge)
    cov = np.linalg.pinv(H)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if res.ridge > 0:
        warnings.warn(
            f"perfect separation detected; refit with L2 ridge {res.ridge:g}",
            SeparationWarning,
            stacklevel=3,
        )
    return LinearModel(
        terms=list(terms),
        weights=res.w,
        std_errors=se,
        aic=aic,
        loglik=-nll(Z, data.y.astype(float), res.w),
        columns=list(data.columns),
        ridge=res.ridge,
        history=res.history,
        steps=steps,
        encoder=data.encoder,
    )


def train_logistic(
    data: Dataset,
    pool: list[Term] | str | None = "auto",
    max_steps: int = 100,
    terms: list[Term] | None = None,
) -> LinearModel:
    """Forward-backward stepwise search minimizing AIC = 2k - 2 logL.

    Candidates are every non-constant main effect plus ``pool`` (``"auto"``:
    pairs among the eight best single terms; ``None``: no interactions).
    Each step applies the single addition or removal with the lowest AIC and
    stops when none improves on the current model. Passing ``terms`` skips
    the search and fits exactly those terms.
    """
    if data.y is None or len(data) == 0:
        raise ValueError("labelled, non-empty data required")
    if terms is not None:
        terms = [tuple(t) for t in terms]
        res, aic = _fit_terms(data, terms)
        return _finish(data, terms, res, aic, [])
    mains: list[Term] = [(c,) for j, c in enumerate(data.columns) if np.ptp(data.X[:, j]) > 0]
    if pool == "auto":
        pool = interaction_pool(data)
    candidates = mains + [tuple(t) for t in (pool or [])]
    current: list[Term] = []
    res, aic = _fit_terms(data, current)
    steps: list[str] = []
    for _ in range(max_steps):
        best = None
        for cand in candidates:
            if cand in current:
                continue
            trial = current + [cand]
            r, a = _fit_terms(data, trial, np.r_[res.w, 0.0])
            if best is None or a < best[0]:
                best = (a, trial, r, f"+{term_name(cand)}")
        for k, term in enumerate(current):
            trial = current[:k] + current[k + 1:]
            r, a = _fit_terms(data, trial, np.delete(res.w, k + 1))
            if best is None or a < best[0]:
                best = (a, trial, r, f"-{term_name(term)}")
        if best is None or best[0] >= aic - 1e-9:
            break
        aic, current, res, move = best
        steps.append(move)
    return _finish(data, current, res, aic, steps)
