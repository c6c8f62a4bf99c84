"""Kernel-level simulators for discriminator flows and residual dynamics.

Discriminator flows live on a finite support in residual space holding the
real point 0 and the generated residuals.  The empirical measure puts mass
1/2 on the real point (N copies of 0 at 1/(2N) each, collapsed into one
support point) and 1/(2N) on each generated residual.  With weights w_j and
kernel matrix K, the kernel operator acts on support values as M = K diag(w).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ntkdiag import jacobi_eigh


class FlowInstabilityError(ArithmeticError):
    pass


def rbf(a, b, ell: float = 1.0) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
    b = np.asarray(b, dtype=np.float64).reshape(1, -1)
    return np.exp(-((a - b) ** 2) / (2.0 * ell * ell))


@dataclass(frozen=True)
class SupportKernel:
    points: np.ndarray      # support locations
    weights: np.ndarray     # empirical measure mass per location
    rho: np.ndarray         # relative real mass per location
    K: np.ndarray           # kernel matrix on the support
    ell: float = 1.0

    @property
    def operator(self) -> np.ndarray:
        return self.K * self.weights[None, :]

    def operator_spectrum(self) -> np.ndarray:
        """Eigenvalues of M = K W via the symmetric form W^1/2 K W^1/2 (ascending)."""
        s = np.sqrt(self.weights)
        lam, _ = jacobi_eigh(s[:, None] * self.K * s[None, :])
        return lam


def make_support(fake, ell: float = 1.0) -> SupportKernel:
    """Support {0} union fake points with the half-weighted empirical measure.

    Coincident locations are merged; where a fake point sits at 0 the target
    value is the relative mass of the real point there.
    """
    fake = np.asarray(fake, dtype=np.float64).reshape(-1)
    n = fake.size
    if n == 0:
        raise ValueError("need at least one generated point")
    locs = [0.0]
    real = [0.5]
    fk = [0.0]
    for r in fake:
        for j, s in enumerate(locs):
            if s == r:
                fk[j] += 0.5 / n
                break
        else:
            locs.append(float(r))
            real.append(0.0)
            fk.append(0.5 / n)
    pts = np.array(locs)
    real = np.array(real)
    fk = np.array(fk)
    w = real + fk
    return SupportKernel(pts, w, real / w, rbf(pts, pts, ell), ell)


@dataclass
class FlowState:
    times: np.ndarray
    values: np.ndarray      # (len(times), M)
    variant: str
    dt: float

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]


# ---------------------------------------------------------------------------
# integrators and matrix exponential

def rk4(rhs: Callable[[float, np.ndarray], np.ndarray], y0, T: float, dt: float,
        store_every: int = 1, blowup: float = 1e12) -> tuple[np.ndarray, np.ndarray]:
    """Classical fourth-order Runge-Kutta with a fixed step that lands on T exactly."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(y0, dtype=np.float64)
    nsteps = max(int(np.ceil(T / dt - 1e-12)), 0)
    h = T / nsteps if nsteps else 0.0
    ts, ys = [0.0], [y.copy()]
    scale = blowup * (1.0 + np.max(np.abs(y), initial=0.0))
    for i in range(nsteps):
        t = i * h
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > scale:
            raise FlowInstabilityError(f"integration blew up at t={t + h:.4g}")
        if (i + 1) % store_every == 0 or i == nsteps - 1:
            ts.append((i + 1) * h)
            ys.append(y.copy())
    return np.array(ts), np.array(ys)


_PADE6 = (1.0, 1.0 / 2, 5.0 / 44, 1.0 / 66, 1.0 / 792, 1.0 / 15840, 1.0 / 665280)


def expm(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade(6,6) approximant."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    norm = np.max(np.sum(np.abs(A), axis=0)) if n else 0.0
    s = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = A / (2.0 ** s)
    I = np.eye(n)
    N = I * _PADE6[0]
    D = I * _PADE6[0]
    P = I
    for k in range(1, 7):
        P = P @ X
        N = N + _PADE6[k] * P
        D = D + ((-1) ** k) * _PADE6[k] * P
    E = np.linalg.solve(D, N)
    for _ in range(s):
        E = E @ E
    return E


# ---------------------------------------------------------------------------
# discriminator flows

def _sigmoid(f):
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def flow_rhs(variant: str, kernel: SupportKernel) -> Callable:
    M = kernel.operator
    rho = kernel.rho
    if variant == "lsgan":
        return lambda t, f: 2.0 * (M @ (rho - f))
    if variant == "gan":
        return lambda t, f: 2.0 * (M @ (rho - _sigmoid(f)))
    if variant == "ipm":
        drift = M @ (2.0 * (2.0 * rho - 1.0))
        return lambda t, f: drift.copy()
    raise ValueError(f"unknown flow variant {variant!r}")


def integrate_disc_flow(variant: str, kernel: SupportKernel, f0, T: float, dt: float,
                        store_every: int = 1, min_dt: float = 1e-8) -> FlowState:
    """RK4 integration of the kernel-operator flow; halves dt on blow-up down to ``min_dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rhs = flow_rhs(variant, kernel)
    h = dt
    while True:
        try:
            ts, ys = rk4(rhs, f0, T, h, store_every)
            return FlowState(ts, ys, variant, h)
        except FlowInstabilityError:
            h *= 0.5
            if h < min_dt:
                raise


def lsgan_closed_form(kernel: SupportKernel, rho, f0, t: float) -> np.ndarray:
    f0 = np.asarray(f0, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    return expm(-2.0 * t * kernel.operator) @ (f0 - rho) + rho


def ipm_witness(fake, query, ell: float = 1.0) -> np.ndarray:
    """f*(q) = k(0, q) - (1/N) sum_i k(r_i, q)."""
    fake = np.asarray(fake, dtype=np.float64).reshape(-1)
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    return rbf([0.0], q, ell)[0] - rbf(fake, q, ell).mean(axis=0)


# ---------------------------------------------------------------------------
# residual-space dynamics

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray


def _traj(ts, ys) -> Trajectory:
    return Trajectory(ts, ys, 0.5 * np.sum(ys * ys, axis=1))


def integrate_linear_dyn(K, A, r0, T: float, dt: float, store_every: int = 1) -> Trajectory:
    """r_dot = -K A r."""
    KA = np.asarray(K) @ np.asarray(A)
    ts, ys = rk4(lambda t, r: -(KA @ r), r0, T, dt, store_every)
    return _traj(ts, ys)


def integrate_multiplicative_dyn(K, Gamma, r0, T: float, dt: float, store_every: int = 1) -> Trajectory:
    """r_dot = K G~ r with G~ diagonal (given as a vector or a matrix)."""
    G = np.asarray(Gamma, dtype=np.float64)
    G = np.diag(G) if G.ndim == 1 else G
    KG = np.asarray(K) @ G
    ts, ys = rk4(lambda t, r: KG @ r, r0, T, dt, store_every)
    return _traj(ts, ys)


def sqrtm_spd(K) -> np.ndarray:
    lam, U = jacobi_eigh(K)
    if lam[0] <= 0:
        raise ValueError("matrix is not positive definite")
    return (U * np.sqrt(lam)) @ U.T


def inertia(eigs, tol: float = 1e-10) -> tuple[int, int, int]:
    eigs = np.asarray(eigs)
    scale = max(np.max(np.abs(eigs), initial=0.0), 1e-300)
    pos = int(np.sum(eigs > tol * scale))
    neg = int(np.sum(eigs < -tol * scale))
    return pos, eigs.size - pos - neg, neg


@dataclass(frozen=True)
class SpectralReport:
    eig_KA: np.ndarray
    eig_H: np.ndarray
    max_deviation: float
    inertia_H: tuple
    inertia_A: tuple

    @property
    def inertia_match(self) -> bool:
        return self.inertia_H == self.inertia_A


def spectral_factor_check(K, A) -> SpectralReport:
    """Compare eig(KA) (general eigensolver) with eig(K^1/2 A K^1/2) (Jacobi)."""
    K = np.asarray(K, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    ev = np.linalg.eigvals(K @ A)
    ev_KA = np.sort(ev.real)
    S = sqrtm_spd(K)
    H = S @ A @ S
    ev_H, _ = jacobi_eigh(0.5 * (H + H.T))
    ev_A, _ = jacobi_eigh(A)
    dev = float(np.max(np.abs(ev_KA - ev_H))) if ev_H.size else 0.0
    dev = max(dev, float(np.max(np.abs(ev.imag), initial=0.0)))
    return SpectralReport(ev_KA, ev_H, dev, inertia(ev_H), inertia(ev_A))


def multiplicative_bounds(K, Gamma, E0: float, times) -> tuple[np.ndarray, np.ndarray]:
    """Envelope kappa(K)^-1 E0 e^{2 l_min(H) t} and kappa(K) E0 e^{2 l_max(H) t}."""
    K = np.asarray(K, dtype=np.float64)
    G = np.asarray(Gamma, dtype=np.float64)
    G = np.diag(G) if G.ndim == 1 else G
    lamK, _ = jacobi_eigh(K)
    kappa = lamK[-1] / lamK[0]
    S = sqrtm_spd(K)
    H = S @ G @ S
    lamH, _ = jacobi_eigh(0.5 * (H + H.T))
    t = np.asarray(times, dtype=np.float64)
    return E0 / kappa * np.exp(2.0 * lamH[0] * t), kappa * E0 * np.exp(2.0 * lamH[-1] * t)


@dataclass(frozen=True)
class ModalDecayReport:
    times: np.ndarray
    modal: np.ndarray       # |r~_j(t)|
    envelope: np.ndarray    # |r~_j(0)| e^{-lambda_j a_* t}
    max_violation: float


def modal_decay_check(K, a_fn: Callable[[float], np.ndarray], a_star: float, r0, T: float,
                      dt: float = 1e-3, store_every: int = 1) -> ModalDecayReport:
    """Simulate r_dot = K gamma with modewise gamma~_j = -a_j(t) r~_j and compare with the envelope."""
    K = np.asarray(K, dtype=np.float64)
    lam, U = jacobi_eigh(K)

    def rhs(t, r):
        return K @ (U @ (-np.asarray(a_fn(t)) * (U.T @ r)))

    ts, ys = rk4(rhs, r0, T, dt, store_every)
    modal = np.abs(ys @ U)
    env = modal[0][None, :] * np.exp(-np.outer(ts, lam) * a_star)
    viol = float(np.max(modal - env, initial=0.0))
    return ModalDecayReport(ts, modal, env, max(viol, 0.0))


# ---------------------------------------------------------------------------
# presets used by the command line

def scenario(name: str, ell: float = 1.0) -> dict:
    """Named kernel-flow scenarios; returns arrays ready for CSV output."""
    if name == "lsgan":
        ker = make_support(np.linspace(0.5, 4.5, 9), ell)
        f0 = np.zeros(ker.points.size)
        st = integrate_disc_flow("lsgan", ker, f0, 1.0, 1e-2)
        cf = np.array([lsgan_closed_form(ker, ker.rho, f0, t) for t in st.times])
        return {"support": ker.points, "times": st.times, "flow": st.values, "closed_form": cf}
    if name == "ipm":
        fake = np.linspace(0.5, 4.5, 9)
        ker = make_support(fake, ell)
        f0 = np.zeros(ker.points.size)
        st = integrate_disc_flow("ipm", ker, f0, 1.0, 1e-2)
        wit = ipm_witness(fake, ker.points, ell)
        return {"support": ker.points, "times": st.times, "flow": st.values,
                "closed_form": f0[None, :] + st.times[:, None] * wit[None, :]}
    if name == "gan":
        ker = make_support(np.linspace(2.0, 10.0, 9), ell)
        lam = ker.operator_spectrum()
        T = 200.0 / lam[0]
        f0 = np.zeros(ker.points.size)
        st = integrate_disc_flow("gan", ker, f0, T, min(1.0 / lam[-1], T), store_every=1000)
        return {"support": ker.points, "times": st.times, "flow": st.values,
                "closed_form": np.tile(ker.rho, (st.times.size, 1))}
    raise ValueError(f"unknown scenario {name!r}")


SCENARIOS = ("lsgan", "ipm", "gan")
