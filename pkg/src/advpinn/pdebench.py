"""Benchmark PDEs with hard-constraint ansatz u = G + H * u_net."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import diffcore as dc
from .diffcore import Jet
from .netmod import NetworkSpec, ParamVector, SpectralState, forward_jet

PI = np.pi


class ConfigurationError(ValueError):
    pass


class UnsupportedMetricError(RuntimeError):
    pass


def _coord(X: Jet, k: int) -> Jet:
    """Channel k of a seeded coordinate jet, as a single-channel jet."""
    return X.like(X.data[..., k:k + 1])


@dataclass(frozen=True)
class PDEProblem:
    name: str
    bounds: tuple            # ((lo0, hi0), (lo1, hi1))
    lift: Callable           # G(X: Jet) -> Jet
    mask: Callable           # H(X: Jet) -> Jet
    operator: Callable       # (u: Jet|Node, X: Jet) -> order-0 residual column
    exact_jet: Optional[Callable] = None
    boundary_data: Optional[Callable] = None   # (pts, side) -> constrained values
    constrained_sides: tuple = ()

    @property
    def ndim(self) -> int:
        return len(self.bounds)

    @property
    def has_exact(self) -> bool:
        return self.exact_jet is not None

    def exact(self, pts) -> np.ndarray:
        if self.exact_jet is None:
            raise UnsupportedMetricError(f"{self.name} has no closed-form solution")
        X = Jet.constant(np.atleast_2d(pts))
        return self.exact_jet(X).data[0, :, 0]


# -- operator helpers -----------------------------------------------------

def _lap(u):
    return dc.add(dc.d2_of(u, 0), dc.d2_of(u, 1))


def _src(arr: np.ndarray) -> np.ndarray:
    return arr.reshape(-1, 1)


# -- laplace1 -------------------------------------------------------------

def _lap1_exact(X):
    x, y = _coord(X, 0), _coord(X, 1)
    c = 1.0 / (2.0 * np.cosh(PI))
    return dc.scale(dc.mul(dc.sin(dc.scale(x, PI)),
                           dc.sub(dc.exp(dc.scale(y, PI)), dc.exp(dc.scale(y, -PI)))), c)


def _lap1_lift(X):
    x, y = _coord(X, 0), _coord(X, 1)
    top = np.tanh(PI)  # (e^pi - e^-pi) / (2 cosh pi)
    return dc.scale(dc.mul(y, dc.sin(dc.scale(x, PI))), top)


def _box_mask(X):
    x, y = _coord(X, 0), _coord(X, 1)
    return dc.mul(dc.mul(x, dc.sub(1.0, x)), dc.mul(y, dc.sub(1.0, y)))


def _laplace_op(u, X):
    return _lap(u)


# -- laplace2 -------------------------------------------------------------

def _lap2_exact(X):
    x, y = _coord(X, 0), _coord(X, 1)
    ch = np.cosh(PI)
    a = dc.mul(dc.sin(dc.scale(x, PI)),
               dc.add(dc.exp(dc.scale(dc.sub(y, 1.0), PI)), dc.exp(dc.scale(dc.sub(1.0, y), PI))))
    b = dc.mul(dc.cos(dc.add(dc.scale(x, PI), PI / 2)),
               dc.sub(dc.exp(dc.scale(y, PI)), dc.exp(dc.scale(y, -PI))))
    return dc.add(dc.scale(a, 1.0 / (2.0 * ch)), dc.scale(b, 1.0 / (4.0 * ch)))


def _lap2_lift(X):
    x, y = _coord(X, 0), _coord(X, 1)
    s = dc.sin(dc.scale(x, PI))
    top = dc.add(dc.scale(s, 1.0 / np.cosh(PI)),
                 dc.scale(dc.cos(dc.add(dc.scale(x, PI), PI / 2)), 0.5 * np.tanh(PI)))
    return dc.add(dc.mul(dc.sub(1.0, y), s), dc.mul(y, top))


# -- poisson --------------------------------------------------------------

def _poisson_exact(X):
    x, y = _coord(X, 0), _coord(X, 1)
    return dc.mul(_box_mask(X), dc.exp(dc.sub(x, y)))


def _poisson_source(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 2.0 * x * (y - 1.0) * (y - 2.0 * x + x * y + 2.0) * np.exp(x - y)


def _zero_lift(X):
    return X.like(np.zeros(X.data.shape[:2] + (1,)))


# -- reaction-diffusion on (0,1) x (0,5) ------------------------------------

def _rd_exact(X):
    x, t = _coord(X, 0), _coord(X, 1)
    return dc.scale(dc.mul(t, dc.mul(x, dc.sub(1.0, x))), 0.2)


def _rd_mask(X):
    x, t = _coord(X, 0), _coord(X, 1)
    return dc.mul(dc.mul(x, dc.sub(1.0, x)), t)


def _rd_source(pts):
    x, t = pts[:, 0], pts[:, 1]
    return 0.4 * t - (2.0 * t - 0.2) * x * (1.0 - x)


# -- burgers on (-5,5) x (0,2.5) -------------------------------------------

NU_BURGERS = 0.001


def _burgers_lift(X):
    x = _coord(X, 0)
    return dc.powi(dc.cosh(x), -1)


def _burgers_mask(X):
    x, t = _coord(X, 0), _coord(X, 1)
    return dc.scale(dc.mul(t, dc.sub(25.0, dc.mul(x, x))), 1.0 / 25.0)


def _burgers_op(u, X):
    ut = dc.d1_of(u, 1)
    ux = dc.d1_of(u, 0)
    uxx = dc.d2_of(u, 0)
    return dc.sub(dc.add(ut, dc.mul(dc.value_of(u), ux)), dc.scale(uxx, NU_BURGERS))


# -- klein-gordon on (0,1) x (0,2) -----------------------------------------

def _kg_exact(X):
    x, t = _coord(X, 0), _coord(X, 1)
    return dc.scale(dc.mul(dc.sin(dc.scale(x, PI)), dc.cos(dc.scale(t, PI))), -0.2)


def _kg_lift(X):
    x = _coord(X, 0)
    return dc.scale(dc.sin(dc.scale(x, PI)), -0.2)


def _kg_mask(X):
    x, t = _coord(X, 0), _coord(X, 1)
    return dc.mul(dc.mul(x, dc.sub(1.0, x)), dc.mul(t, t))


def _kg_source(pts):
    x, t = pts[:, 0], pts[:, 1]
    return 0.8 * np.sin(PI * x) * np.cos(PI * t)


def _with_source(op, source):
    def f(u, X):
        return dc.sub(op(u, X), _src(source(X.data[0])))
    return f


def _rd_op(u, X):
    lhs = dc.sub(dc.sub(dc.d1_of(u, 1), dc.d2_of(u, 0)), dc.scale(dc.value_of(u), 10.0))
    return dc.sub(lhs, _src(_rd_source(X.data[0])))


def _kg_op(u, X):
    lhs = dc.sub(dc.sub(dc.d2_of(u, 1), dc.d2_of(u, 0)), dc.scale(dc.value_of(u), 4.0))
    return dc.sub(lhs, _src(_kg_source(X.data[0])))


def _exact_data(exact_jet):
    def f(pts, side):
        return exact_jet(Jet.constant(pts)).data[0, :, 0]
    return f


def _burgers_data(pts, side):
    if side == "t0":
        return 1.0 / np.cosh(pts[:, 0])
    return np.full(len(pts), 1.0 / np.cosh(5.0))


_UNIT = ((0.0, 1.0), (0.0, 1.0))
_BOX_SIDES = ("x0", "x1", "y0", "y1")
_TIME_SIDES = ("x0", "x1", "t0")


def make_problem(name: str) -> PDEProblem:
    if name == "laplace1":
        return PDEProblem(name, _UNIT, _lap1_lift, _box_mask, _laplace_op, _lap1_exact,
                          _exact_data(_lap1_exact), _BOX_SIDES)
    if name == "laplace2":
        return PDEProblem(name, _UNIT, _lap2_lift, _box_mask, _laplace_op, _lap2_exact,
                          _exact_data(_lap2_exact), _BOX_SIDES)
    if name == "poisson":
        return PDEProblem(name, _UNIT, _zero_lift, _box_mask,
                          _with_source(_laplace_op, _poisson_source), _poisson_exact,
                          _exact_data(_poisson_exact), _BOX_SIDES)
    if name == "reaction_diffusion":
        return PDEProblem(name, ((0.0, 1.0), (0.0, 5.0)), _zero_lift, _rd_mask, _rd_op, _rd_exact,
                          _exact_data(_rd_exact), _TIME_SIDES)
    if name == "burgers":
        return PDEProblem(name, ((-5.0, 5.0), (0.0, 2.5)), _burgers_lift, _burgers_mask,
                          _burgers_op, None, _burgers_data, _TIME_SIDES)
    if name == "klein_gordon":
        return PDEProblem(name, ((0.0, 1.0), (0.0, 2.0)), _kg_lift, _kg_mask, _kg_op, _kg_exact,
                          _exact_data(_kg_exact), _TIME_SIDES)
    raise ConfigurationError(f"unknown problem {name!r}")


PROBLEMS = ("laplace1", "laplace2", "poisson", "reaction_diffusion", "burgers", "klein_gordon")


# -- evaluation -------------------------------------------------------------

def ansatz_jet(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, pts,
               order: int = 2, leaves=None, sn: SpectralState | None = None):
    """u = G + H * u_net on points (N, 2); a Jet, or a tape Node when ``leaves`` is given."""
    X = Jet.seed(np.atleast_2d(pts), order=order)
    net = forward_jet(spec, params, X, leaves=leaves, sn=sn)
    return dc.add(problem.lift(X), dc.mul(problem.mask(X), net)), X


def ansatz_eval(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, x) -> dc.DualJet:
    u, _ = ansatz_jet(problem, spec, params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    D = problem.ndim
    return dc.DualJet(float(u.data[0, 0, 0]), u.data[1:1 + D, 0, 0].copy(), u.data[1 + D:, 0, 0].copy())


def residual_from_u(problem: PDEProblem, u, X: Jet):
    return problem.operator(u, X)


def residuals(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, pts,
              leaves=None) -> np.ndarray | dc.Node:
    """Residual column at points; plain array unless recorded on a tape via ``leaves``."""
    u, X = ansatz_jet(problem, spec, params, pts, leaves=leaves)
    r = problem.operator(u, X)
    if leaves is not None:
        return r
    return r.data[0, :, 0]


def residual(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, x) -> float:
    return float(residuals(problem, spec, params, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def exact_residuals(problem: PDEProblem, pts) -> np.ndarray:
    """Residual of the closed-form solution itself."""
    if problem.exact_jet is None:
        raise UnsupportedMetricError(f"{problem.name} has no closed-form solution")
    X = Jet.seed(np.atleast_2d(pts), order=2)
    return problem.operator(problem.exact_jet(X), X).data[0, :, 0]


def solution(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, pts) -> np.ndarray:
    u, _ = ansatz_jet(problem, spec, params, pts, order=0)
    return u.data[0, :, 0]


# -- grids ------------------------------------------------------------------

@dataclass(frozen=True)
class CollocationGrid:
    points: np.ndarray
    n: int
    seed: Optional[int] = None


def collocation(problem: PDEProblem, n: int, seed: Optional[int] = None) -> CollocationGrid:
    """n x n cell centres, with uniform jitter of at most 0.45 cell when ``seed`` is given."""
    if n < 2:
        raise ConfigurationError("grid resolution must be >= 2")
    axes = []
    for lo, hi in problem.bounds:
        h = (hi - lo) / n
        axes.append((lo + (np.arange(n) + 0.5) * h, h))
    gx, gy = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if seed is not None:
        rng = np.random.default_rng(seed)
        cell = np.array([axes[0][1], axes[1][1]])
        pts = pts + rng.uniform(-0.45, 0.45, size=pts.shape) * cell
    return CollocationGrid(pts, n, seed)


def validation_points(problem: PDEProblem, m: int) -> np.ndarray:
    """Interior m x m grid at lo + (i+1) L/(m+1); never meets even-n cell centres."""
    axes = [lo + (np.arange(m) + 1.0) * (hi - lo) / (m + 1) for lo, hi in problem.bounds]
    gx, gy = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def validation_mse(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, m: int) -> float:
    if not problem.has_exact:
        raise UnsupportedMetricError(f"validation MSE is not available for {problem.name}")
    pts = validation_points(problem, m)
    d = solution(problem, spec, params, pts) - problem.exact(pts)
    return float(np.mean(d * d))


def train_mse(problem: PDEProblem, spec: NetworkSpec, params: ParamVector, pts) -> float:
    if not problem.has_exact:
        raise UnsupportedMetricError(f"training MSE is not available for {problem.name}")
    d = solution(problem, spec, params, pts) - problem.exact(pts)
    return float(np.mean(d * d))


def boundary_points(problem: PDEProblem, n_per_side: int, rng) -> dict[str, np.ndarray]:
    """Random points on each constrained side of the domain."""
    (x0, x1), (y0, y1) = problem.bounds
    out = {}
    for side in problem.constrained_sides:
        s = rng.uniform(0.0, 1.0, n_per_side)
        if side in ("x0", "x1"):
            xv = x0 if side == "x0" else x1
            out[side] = np.stack([np.full(n_per_side, xv), y0 + s * (y1 - y0)], axis=1)
        else:
            yv = y1 if side == "y1" else y0
            out[side] = np.stack([x0 + s * (x1 - x0), np.full(n_per_side, yv)], axis=1)
    return out


def constraint_violation(problem: PDEProblem, spec: NetworkSpec, params: ParamVector,
                         n_points: int = 200, seed: int = 0) -> float:
    """Max |u - data| over ``n_points`` constrained points (plus |u_t| at t=0 for klein_gordon)."""
    rng = np.random.default_rng(seed)
    sides = problem.constrained_sides
    per = int(np.ceil(n_points / len(sides)))
    worst = 0.0
    for side, pts in boundary_points(problem, per, rng).items():
        u, _ = ansatz_jet(problem, spec, params, pts, order=1)
        worst = max(worst, float(np.max(np.abs(u.data[0, :, 0] - problem.boundary_data(pts, side)))))
        if problem.name == "klein_gordon" and side == "t0":
            worst = max(worst, float(np.max(np.abs(u.data[2, :, 0]))))
    return worst
