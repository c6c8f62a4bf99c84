"""Residual-NTK diagnostics: Gram matrix, energy, first-order score, modal view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EigenSolverError(ArithmeticError):
    pass


@dataclass(frozen=True)
class NtkGram:
    K: np.ndarray

    def check(self, sym_tol: float = 1e-10, psd_tol: float = 1e-8) -> tuple[bool, bool]:
        K = self.K
        scale = np.max(np.abs(K)) if K.size else 0.0
        sym = bool(np.max(np.abs(K - K.T), initial=0.0) <= sym_tol * max(scale, 1e-300))
        ev = np.linalg.eigvalsh(0.5 * (K + K.T)) if K.size else np.zeros(1)
        psd = bool(ev[0] >= -psd_tol * max(ev[-1], 0.0))
        return sym, psd


@dataclass(frozen=True)
class ViolationStats:
    positive_ratio: float
    positive_mean: float
    max_value: float
    l1_violation: float
    l2_violation: float

    def as_tuple(self):
        return (self.positive_ratio, self.positive_mean, self.max_value,
                self.l1_violation, self.l2_violation)

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("positive_ratio", "positive_mean", "max_value", "l1_violation", "l2_violation")}


@dataclass(frozen=True)
class ModalView:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    r_modal: np.ndarray
    gamma_modal: np.ndarray
    terms: np.ndarray


def ntk_gram(J: np.ndarray) -> NtkGram:
    J = np.asarray(J, dtype=np.float64)
    K = J @ J.T
    # exact symmetry (the product is symmetric up to summation order)
    K = 0.5 * (K + K.T)
    return NtkGram(K)


def residual_energy(r) -> float:
    r = np.asarray(r, dtype=np.float64)
    return 0.5 * float(r @ r)


def first_order_score(r, K, gamma) -> float:
    K = K.K if isinstance(K, NtkGram) else K
    return float(np.asarray(r) @ (np.asarray(K) @ np.asarray(gamma)))


def predicted_step(r, K, gamma, eta: float) -> tuple[np.ndarray, float]:
    if eta <= 0:
        raise ValueError("eta must be positive")
    K = K.K if isinstance(K, NtkGram) else np.asarray(K)
    r = np.asarray(r, dtype=np.float64)
    Kg = K @ np.asarray(gamma, dtype=np.float64)
    return r + eta * Kg, eta * float(r @ Kg)


# ---------------------------------------------------------------------------
# symmetric eigensolver: cyclic Jacobi with a round-robin (parallel) ordering

def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    m = n if n % 2 == 0 else n + 1
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=int), np.array(q, dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(A):
    B = A.copy()
    np.fill_diagonal(B, 0.0)
    return np.linalg.norm(B)


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n <= 1:
        return np.diag(A).copy(), V
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = _off_norm(A)
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = A[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            app, aqq = A[p, p], A[q, q]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                tau = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # columns, then rows: A <- J^T A J
            Ap, Aq = A[:, p].copy(), A[:, q].copy()
            A[:, p] = c * Ap - s * Aq
            A[:, q] = s * Ap + c * Aq
            Ap, Aq = A[p, :].copy(), A[q, :].copy()
            A[p, :] = c[:, None] * Ap - s[:, None] * Aq
            A[q, :] = s[:, None] * Ap + c[:, None] * Aq
            A[p, q] = 0.0
            A[q, p] = 0.0
            Vp, Vq = V[:, p].copy(), V[:, q].copy()
            V[:, p] = c * Vp - s * Vq
            V[:, q] = s * Vp + c * Vq
    else:
        off = _off_norm(A)
        if off > 1e3 * tol * scale:
            d = np.abs(np.diag(A))
            cond = d.max() / max(d.min(), 1e-300)
            raise EigenSolverError(f"Jacobi did not converge (off-norm {off:.3e}, condition estimate {cond:.3e})")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def modal_view(K, r, gamma) -> ModalView:
    K = K.K if isinstance(K, NtkGram) else np.asarray(K, dtype=np.float64)
    lam, U = jacobi_eigh(K)
    rt = U.T @ np.asarray(r, dtype=np.float64)
    gt = U.T @ np.asarray(gamma, dtype=np.float64)
    return ModalView(lam, U, rt, gt, lam * rt * gt)


def spectrum_bounds(K) -> tuple[float, float]:
    """Smallest and largest eigenvalue (LAPACK; used for per-iteration logging)."""
    K = K.K if isinstance(K, NtkGram) else np.asarray(K)
    ev = np.linalg.eigvalsh(K)
    return float(ev[0]), float(ev[-1])


def violation_stats(series) -> ViolationStats:
    s = np.asarray(series, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise ValueError("empty series")
    pos = s[s > 0]
    pp = np.maximum(s, 0.0)
    return ViolationStats(
        positive_ratio=pos.size / s.size,
        positive_mean=float(pos.mean()) if pos.size else 0.0,
        max_value=float(pp.max()),
        l1_violation=float(pp.sum()),
        l2_violation=float((pp * pp).sum()),
    )


def moving_average(x, window: int = 300) -> np.ndarray:
    """Trailing moving average; the first entries average over what is available."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
