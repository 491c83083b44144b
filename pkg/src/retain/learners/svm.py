"""Soft-margin SVM solved by SMO with second-order working-set selection,
plus sigmoid (Platt) probability calibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..featurize import Dataset, Encoder

KKT_TOL = 1e-3
TAU = 1e-12
LINEAR, RBF = 0, 1
KERNELS = {"linear": LINEAR, "rbf": RBF}
CACHE_BYTES = 400 * 2**20


class ConvergenceError(RuntimeError):
    def __init__(self, max_iter: int, gap: float) -> None:
        super().__init__(f"SMO did not reach KKT tolerance within {max_iter} iterations (gap {gap:.3g})")
        self.max_iter = max_iter
        self.gap = gap


@njit(cache=True, nogil=True)
def _kernel_row(x, sq, i, kind, gamma, out):
    n, d = x.shape
    for t in range(n):
        dot = 0.0
        for c in range(d):
            dot += x[i, c] * x[t, c]
        if kind == LINEAR:
            out[t] = dot
        else:
            out[t] = np.exp(-gamma * max(sq[i] + sq[t] - 2.0 * dot, 0.0))


@njit(cache=True, nogil=True)
def _smo(x, y, C, kind, gamma, tol, max_iter, cache_rows):
    """LIBSVM-style solver for min 1/2 a'Qa - e'a, 0 <= a <= C, y'a = 0.

    Kernel rows live in a small LRU cache of ``cache_rows`` slots.
    Returns (alpha, rho, iterations, final gap); iterations == -1 when the
    cap was hit.
    """
    n, d = x.shape
    sq = np.empty(n)
    for i in range(n):
        s = 0.0
        for c in range(d):
            s += x[i, c] * x[i, c]
        sq[i] = s
    qd = np.empty(n)
    for i in range(n):
        qd[i] = sq[i] if kind == LINEAR else 1.0
    alpha = np.zeros(n)
    grad = -np.ones(n)
    slots = np.empty((cache_rows, n))
    slot_of = np.full(n, -1, dtype=np.int64)
    owner = np.full(cache_rows, -1, dtype=np.int64)
    stamp = np.zeros(cache_rows, dtype=np.int64)
    clock = 0
    it = 0
    gap = np.inf
    capped = True
    while it < max_iter:
        # select i: max over I_up of -y G
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] == 1:
                if alpha[t] < C and -grad[t] >= gmax:
                    gmax = -grad[t]
                    i = t
            else:
                if alpha[t] > 0 and grad[t] >= gmax:
                    gmax = grad[t]
                    i = t
        if i < 0:
            gap = 0.0
            capped = False
            break
        # fetch kernel row i
        clock += 1
        si = slot_of[i]
        if si < 0:
            si = 0
            for s in range(cache_rows):
                if stamp[s] < stamp[si]:
                    si = s
            if owner[si] >= 0:
                slot_of[owner[si]] = -1
            _kernel_row(x, sq, i, kind, gamma, slots[si])
            owner[si] = i
            slot_of[i] = si
        stamp[si] = clock
        ki = slots[si]
        # select j by second-order gain
        gmax2 = -np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if y[t] == 1:
                if alpha[t] > 0:
                    diff = gmax + grad[t]
                    if grad[t] >= gmax2:
                        gmax2 = grad[t]
                    if diff > 0:
                        quad = qd[i] + qd[t] - 2.0 * ki[t]
                        obj = -(diff * diff) / (quad if quad > 0 else TAU)
                        if obj <= best:
                            best = obj
                            j = t
            else:
                if alpha[t] < C:
                    diff = gmax - grad[t]
                    if -grad[t] >= gmax2:
                        gmax2 = -grad[t]
                    if diff > 0:
                        quad = qd[i] + qd[t] - 2.0 * ki[t]
                        obj = -(diff * diff) / (quad if quad > 0 else TAU)
                        if obj <= best:
                            best = obj
                            j = t
        gap = gmax + gmax2
        if gap < tol or j < 0:
            capped = False
            break
        it += 1
        # fetch kernel row j
        clock += 1
        sj = slot_of[j]
        if sj < 0:
            sj = 0
            for s in range(cache_rows):
                if stamp[s] < stamp[sj]:
                    sj = s
            if owner[sj] >= 0:
                slot_of[owner[sj]] = -1
            _kernel_row(x, sq, j, kind, gamma, slots[sj])
            owner[sj] = j
            slot_of[j] = sj
        stamp[sj] = clock
        ki = slots[slot_of[i]]
        kj = slots[sj]
        kij = ki[j]
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = qd[i] + qd[j] - 2.0 * kij
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = qd[i] + qd[j] - 2.0 * kij
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        dai = alpha[i] - ai
        daj = alpha[j] - aj
        for t in range(n):
            grad[t] += y[t] * (y[i] * ki[t] * dai + y[j] * kj[t] * daj)
    if capped:
        return alpha, 0.0, -1, gap
    # bias from free vectors, else midpoint of the feasible interval
    ub, lb = np.inf, -np.inf
    free_sum, n_free = 0.0, 0
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= C:
            if y[t] == -1:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] == 1:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            free_sum += yg
    rho = free_sum / n_free if n_free > 0 else 0.5 * (ub + lb)
    return alpha, rho, it, gap


@njit(cache=True, nogil=True)
def _decision(sv, coef, rho, x, kind, gamma):
    n, d = x.shape
    out = np.empty(n)
    for r in range(n):
        acc = 0.0
        xx = 0.0
        for c in range(d):
            xx += x[r, c] * x[r, c]
        for s in range(sv.shape[0]):
            dot = 0.0
            ss = 0.0
            for c in range(d):
                dot += sv[s, c] * x[r, c]
                ss += sv[s, c] * sv[s, c]
            if kind == LINEAR:
                acc += coef[s] * dot
            else:
                acc += coef[s] * np.exp(-gamma * max(ss + xx - 2.0 * dot, 0.0))
        out[r] = acc - rho
    return out


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    """Maximization form: sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    dot = A @ B.T
    if kernel == "linear":
        return dot
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * dot
    return np.exp(-gamma * np.maximum(sq, 0.0))


def platt_fit(f: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Sigmoid P(y=1|f) = 1/(1+exp(A f + B)) by regularized-target Newton
    with backtracking (the numerically careful variant of Platt's method)."""
    f = np.asarray(f, dtype=float)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)
    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def objective(a: float, b: float) -> float:
        z = f * a + b
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(A, B)
    sigma = 1e-12
    for _ in range(max_iter):
        z = f * A + B
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        q = 1 - p
        d2 = p * q
        h11 = sigma + float(f * f @ d2)
        h22 = sigma + float(d2.sum())
        h21 = float(f @ d2)
        d1 = t - p
        g1 = float(f @ d1)
        g2 = float(d1.sum())
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return float(A), float(B)


def platt_prob(f: np.ndarray, A: float, B: float) -> np.ndarray:
    z = f * A + B
    return np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))


@dataclass
class KernelMachine:
    kernel: str
    C: float
    gamma: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i for support vectors
    rho: float
    A: float
    B: float
    columns: list[str]
    n_iter: int = 0
    encoder: Encoder | None = None
    family: str = field(default="svm", init=False)

    def decision(self, X: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(X, dtype=np.float64)
        if self.kernel == "linear":
            w = self.dual_coef @ self.support_vectors if len(self.dual_coef) else np.zeros(x.shape[1])
            return np.sum(x * w, axis=1) - self.rho
        return _decision(self.support_vectors, self.dual_coef, self.rho, x, KERNELS[self.kernel], self.gamma)

    def score(self, data: Dataset) -> np.ndarray:
        return platt_prob(self.decision(data.X), self.A, self.B)

    def params(self) -> dict:
        return {
            "kernel": self.kernel,
            "C": self.C,
            "gamma": self.gamma,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "rho": self.rho,
            "A": self.A,
            "B": self.B,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_params(cls, p: dict, columns, encoder=None) -> KernelMachine:
        sv = np.asarray(p["support_vectors"], dtype=float).reshape(-1, len(columns))
        return cls(
            kernel=p["kernel"], C=float(p["C"]), gamma=float(p["gamma"]),
            support_vectors=sv, dual_coef=np.asarray(p["dual_coef"], dtype=float),
            rho=float(p["rho"]), A=float(p["A"]), B=float(p["B"]),
            columns=list(columns), n_iter=int(p.get("n_iter", 0)), encoder=encoder,
        )


@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    n_iter: int
    gap: float


def solve_dual(
    X: np.ndarray,
    y01: np.ndarray,
    C: float,
    kernel: str = "rbf",
    gamma: float = 0.1,
    tol: float = KKT_TOL,
    max_iter: int | None = None,
) -> DualSolution:
    """Raw SMO solve on a numeric matrix with 0/1 labels."""
    if C <= 0:
        raise ValueError("C must be positive")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}")
    if kernel == "rbf" and gamma <= 0:
        raise ValueError("gamma must be positive for the rbf kernel")
    x = np.ascontiguousarray(X, dtype=np.float64)
    y = np.where(np.asarray(y01) == 1, 1.0, -1.0)
    n = len(x)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    cache_rows = int(max(2, min(n, CACHE_BYTES // (8 * max(n, 1)))))
    alpha, rho, it, gap = _smo(x, y, float(C), KERNELS[kernel], float(gamma), tol, int(max_iter), cache_rows)
    if it < 0:
        raise ConvergenceError(max_iter, gap)
    return DualSolution(alpha, float(rho), int(it), float(gap))


def _machine(X, y01, C, kernel, gamma, tol, max_iter, columns=None, encoder=None) -> KernelMachine:
    sol = solve_dual(X, y01, C, kernel, gamma, tol, max_iter)
    sv = sol.alpha > 0
    y = np.where(np.asarray(y01) == 1, 1.0, -1.0)
    return KernelMachine(
        kernel=kernel, C=float(C), gamma=float(gamma),
        support_vectors=np.ascontiguousarray(X[sv], dtype=np.float64),
        dual_coef=sol.alpha[sv] * y[sv],
        rho=sol.rho, A=-1.0, B=0.0,
        columns=list(columns or []), n_iter=sol.n_iter, encoder=encoder,
    )


def train_svm(
    data: Dataset,
    kernel: str = "rbf",
    C: float = 1.0,
    gamma: float = 0.1,
    seed: int = 0,
    calibrate: bool = True,
    tol: float = KKT_TOL,
    max_iter: int | None = None,
) -> KernelMachine:
    """Fit the dual on standardized columns, then a sigmoid calibration on
    out-of-fold decision values from a seeded 3-fold internal split.

    Falls back to in-sample decision values when a fold would be too small
    or single-class. With ``calibrate=False`` the sigmoid is fixed at
    A=-1, B=0, so the 0.5 boundary coincides with the decision boundary.
    """
    X, y = data.X, np.asarray(data.y)
    model = _machine(X, y, C, kernel, gamma, tol, max_iter, data.columns, data.encoder)
    if not calibrate:
        return model
    n = len(X)
    folds = np.random.default_rng(seed).permutation(n) % 3
    usable = n >= 30 and all(len(np.unique(y[folds != k])) == 2 for k in range(3))
    if usable:
        f = np.empty(n)
        for k in range(3):
            tr, te = folds != k, folds == k
            sub = _machine(X[tr], y[tr], C, kernel, gamma, tol, max_iter)
            f[te] = sub.decision(X[te])
    else:
        f = model.decision(X)
    model.A, model.B = platt_fit(f, y)
    return model
