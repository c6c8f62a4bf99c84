"""Adam, fixed-ratio alternating training and rollback training."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import advobj as ao
from . import diffcore as dc
from . import netmod as nm
from . import ntkdiag as nd
from . import pdebench as pb
from .diffcore import StructuralError


class TrainingAborted(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Adam

@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_gamma: Optional[float] = None
    decay_step: Optional[int] = None

    def lr_at(self, step: int) -> float:
        """Learning rate for the update taken after ``step`` completed updates."""
        if self.decay_gamma is None or not self.decay_step:
            return self.lr
        return self.lr * self.decay_gamma ** (step // self.decay_step)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def zeros(cls, n: int, config: AdamConfig | None = None) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, config or AdamConfig())

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.config)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam descent step; returns new state and parameters."""
    g = np.asarray(grads, dtype=np.float64)
    p = np.asarray(params, dtype=np.float64)
    if g.shape != p.shape or state.m.shape != p.shape:
        raise StructuralError("Adam shapes do not conform")
    c = state.config
    lr = c.lr_at(state.step)
    t = state.step + 1
    m = c.beta1 * state.m + (1.0 - c.beta1) * g
    v = c.beta2 * state.v + (1.0 - c.beta2) * g * g
    mhat = m / (1.0 - c.beta1 ** t)
    vhat = v / (1.0 - c.beta2 ** t)
    new_p = p - lr * mhat / (np.sqrt(vhat) + c.eps)
    return AdamState(m, v, t, c), new_p


# ---------------------------------------------------------------------------
# snapshots

@dataclass(frozen=True)
class Snapshot:
    layout: tuple
    values: np.ndarray
    adam: AdamState
    extra: Optional[np.ndarray] = None

    def same_as(self, other: "Snapshot") -> bool:
        def eq(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.tobytes() == b.tobytes()
        return (self.layout == other.layout and eq(self.values, other.values)
                and eq(self.adam.m, other.adam.m) and eq(self.adam.v, other.adam.v)
                and self.adam.step == other.adam.step and eq(self.extra, other.extra))


def snapshot(layout, values: np.ndarray, adam: AdamState, extra: np.ndarray | None = None) -> Snapshot:
    return Snapshot(tuple(tuple(l) if isinstance(l, (list, tuple)) else l for l in layout),
                    values.copy(), adam.copy(), None if extra is None else extra.copy())


def restore(token: Snapshot, layout) -> tuple[np.ndarray, AdamState, Optional[np.ndarray]]:
    lay = tuple(tuple(l) if isinstance(l, (list, tuple)) else l for l in layout)
    if lay != token.layout:
        raise StructuralError("snapshot belongs to a different architecture")
    extra = None if token.extra is None else token.extra.copy()
    return token.values.copy(), token.adam.copy(), extra


# ---------------------------------------------------------------------------
# configuration and history

@dataclass(frozen=True)
class TrainConfig:
    problem: str = "poisson"
    gen_spec: nm.NetworkSpec = field(default_factory=lambda: nm.NetworkSpec(2, (20, 20, 20), residual_links=True))
    disc_spec: Optional[nm.NetworkSpec] = field(default_factory=lambda: nm.NetworkSpec(1, (20, 20)))
    variant: ao.GanVariant = field(default_factory=ao.GanVariant)
    grid: int = 16
    validation_grid: Optional[int] = None
    jitter: bool = False
    seed: int = 0
    iterations: int = 100
    mode: str = "rollback"              # "rollback" or "fixed"
    g_steps: int = 20                   # T_G, or generator steps per outer iteration in fixed mode
    d_steps: int = 20                   # T_D, or discriminator steps per outer iteration in fixed mode
    gen_adam: AdamConfig = field(default_factory=AdamConfig)
    disc_adam: AdamConfig = field(default_factory=AdamConfig)
    include_noop_candidate: bool = False
    restore_optimizer: bool = True
    sn_iters: int = 1
    spectrum_every: int = 1
    log_wall_time: bool = False

    def __post_init__(self):
        if self.mode not in ("rollback", "fixed"):
            raise ValueError("mode must be 'rollback' or 'fixed'")
        if self.g_steps < 1 or self.d_steps < 1:
            raise ValueError("step budgets must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.variant.family not in ao.MASK_FAMILIES and self.disc_spec is None:
            raise ValueError("a discriminator spec is required for neural critics")

    @property
    def val_grid(self) -> int:
        return self.validation_grid or self.grid


@dataclass
class IterationRecord:
    iteration: int
    E: float
    S: float
    E_start: float
    train_mse: float
    validation_mse: float
    accepted_g_depth: int
    accepted_d_depth: int
    saturation_count: int
    lambda_min: float
    lambda_max: float
    wall_ms: float
    g_updates: int
    d_updates: int
    S_candidates: list
    E_candidates: list
    candidate_offset: int


METRIC_FIELDS = ("iteration", "E", "S", "train_mse", "validation_mse", "accepted_g_depth",
                 "accepted_d_depth", "saturation_count", "lambda_min", "lambda_max", "wall_ms")


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def rows(self) -> list[dict]:
        return [{k: getattr(r, k) for k in METRIC_FIELDS} for r in self.records]


# ---------------------------------------------------------------------------
# discriminator side

class _Critic:
    """Wraps an MLP or mask critic with its optimiser and a snapshot interface."""

    def __init__(self, cfg: TrainConfig, n_points: int, seed: int, gp_seed: int):
        self.variant = cfg.variant
        self.mask = cfg.variant.family in ao.MASK_FAMILIES
        self.sn_iters = cfg.sn_iters
        if self.mask:
            self.model = ao.MaskCritic.initial(cfg.variant.family, n_points)
            self.layout = (("mask", cfg.variant.family, n_points),)
            self.adam = AdamState.zeros(n_points, cfg.disc_adam)
        else:
            spec = cfg.disc_spec
            self.model = ao.MLPCritic(spec, nm.init(spec, seed))
            self.layout = tuple(self.model.params.layout)
            self.adam = AdamState.zeros(spec.num_params(), cfg.disc_adam)
            if spec.spectral_norm:
                self.model.sn.refresh(self.model.params, 20)
        self.gp_rng = np.random.default_rng(gp_seed)

    @property
    def values(self) -> np.ndarray:
        return self.model.params if self.mask else self.model.params.values

    def _set(self, values):
        if self.mask:
            self.model.params = values
        else:
            self.model.params = self.model.params.with_values(values)

    def _sn_flat(self):
        if self.mask or self.model.sn is None:
            return None
        return self.model.sn.flat()

    def snapshot(self) -> Snapshot:
        return snapshot(self.layout, self.values, self.adam, self._sn_flat())

    def restore(self, token: Snapshot, with_optimizer: bool = True):
        vals, adam, extra = restore(token, self.layout)
        self._set(vals)
        if with_optimizer:
            self.adam = adam
        if extra is not None:
            self.model.sn.load_flat(self.model.spec, extra)

    def objective_grad(self, r: np.ndarray) -> tuple[np.ndarray, float, int]:
        """Gradient of the discriminator objective (to maximise), its value, and saturations."""
        x = ao.disc_inputs(self.variant, r)
        n = x.size
        if self.mask:
            val = float(np.mean(0.5 * self.model.weights() * x))
            return self.model.loss_grad(x), val, 0
        crit = self.model
        if crit.spec.spectral_norm:
            crit.sn.refresh(crit.params, self.sn_iters)
        inputs = np.concatenate([x, [0.0]])  # the N real copies of 0 share one evaluation
        parts = {}

        def seed(fv):
            parts["fake"] = ao.pqr(self.variant, fv[:n])
            parts["real"] = ao.pqr(self.variant, fv[n:])
            return np.concatenate([parts["fake"].dQ / n, parts["real"].dP])

        _, g = nm.score_and_grad(crit.spec, crit.params, inputs, seed, crit.sn)
        ff, pr = parts["fake"], parts["real"]
        val = float(np.mean(ff.Q) + pr.P[0])
        if self.variant.family == "wgan_gp":
            u = self.gp_rng.uniform(0.0, 1.0, n)
            tape = dc.Tape()
            leaves = tape.watch(crit.params)
            xh = crit.record(tape, leaves, (1.0 - u) * x, order=1)
            slope = dc.d1_of(xh, 0)
            pen = dc.mean_rows(dc.powi(dc.sub(dc.absolute(slope), 1.0), 2))
            val -= self.variant.gp_coefficient * float(pen.value.data[0, 0, 0])
            lv = tape.backward(pen, np.full((1, 1, 1), -self.variant.gp_coefficient))
            g = g + dc._scatter(tape, lv, crit.params)
        return g, val, ff.saturated + pr.saturated

    def step(self, r: np.ndarray) -> int:
        g, val, sat = self.objective_grad(r)
        if not (np.isfinite(val) and np.all(np.isfinite(g))):
            raise TrainingAborted("non-finite discriminator objective")
        self.adam, new = adam_step(self.adam, self.values, -g)
        self._set(new)
        return sat

    def gamma(self, r: np.ndarray) -> np.ndarray:
        if self.mask:
            return ao.constrained_gamma(self.variant.family, r, self.model)
        return ao.descent_gamma(self.variant, r, self.model)

    def gen_saturation(self, r: np.ndarray) -> int:
        if self.variant.kind != "gan":
            return 0
        return ao.pqr(self.variant, self.model.score(ao.disc_inputs(self.variant, r))).saturated


# ---------------------------------------------------------------------------
# trainer

class Trainer:
    """Holds generator/critic state and runs outer iterations."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.problem = pb.make_problem(cfg.problem)
        ss = np.random.SeedSequence(cfg.seed)
        s_gen, s_disc, s_gp, s_jit = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
        self.grid = pb.collocation(self.problem, cfg.grid, s_jit if cfg.jitter else None)
        self.pts = self.grid.points
        self.spec = cfg.gen_spec
        self.theta = nm.init(self.spec, s_gen)
        self.gen_adam = AdamState.zeros(self.spec.num_params(), cfg.gen_adam)
        self.critic = _Critic(cfg, len(self.pts), s_disc, s_gp)
        self.iteration = 0
        self.history = TrainHistory()

    # -- generator pieces ------------------------------------------------
    def residual_and_jacobian(self) -> tuple[np.ndarray, np.ndarray]:
        tape = dc.Tape()
        leaves = tape.watch(self.theta)
        r = pb.residuals(self.problem, self.spec, self.theta, self.pts, leaves=leaves)
        return r.value.data[0, :, 0].copy(), dc.jacobian_params(r, self.theta)

    def residual_tape(self):
        tape = dc.Tape()
        leaves = tape.watch(self.theta)
        r = pb.residuals(self.problem, self.spec, self.theta, self.pts, leaves=leaves)
        return tape, r, r.value.data[0, :, 0].copy()

    def _gen_update(self, grad: np.ndarray):
        if not np.all(np.isfinite(grad)):
            raise TrainingAborted("non-finite generator gradient")
        self.gen_adam, new = adam_step(self.gen_adam, self.theta.values, grad)
        self.theta = self.theta.with_values(new)

    def gen_grad(self, tape, rnode, gamma) -> np.ndarray:
        # dL_G/dr = -gamma, chained through the residual tape
        leaves = tape.backward(rnode, (-gamma).reshape(1, -1, 1))
        return dc._scatter(tape, leaves, self.theta)

    def gen_snapshot(self) -> Snapshot:
        return snapshot(self.theta.layout, self.theta.values, self.gen_adam)

    def gen_restore(self, token: Snapshot, with_optimizer: bool = True):
        vals, adam, _ = restore(token, self.theta.layout)
        self.theta = self.theta.with_values(vals)
        if with_optimizer:
            self.gen_adam = adam

    # -- metrics ---------------------------------------------------------
    def _mse(self) -> tuple[float, float]:
        if not self.problem.has_exact:
            return float("nan"), float("nan")
        tr = pb.train_mse(self.problem, self.spec, self.theta, self.pts)
        va = pb.validation_mse(self.problem, self.spec, self.theta, self.cfg.val_grid)
        return tr, va

    def _spectrum(self, K) -> tuple[float, float]:
        every = self.cfg.spectrum_every
        if every and self.iteration % every == 0:
            return nd.spectrum_bounds(K)
        return float("nan"), float("nan")

    # -- outer iterations ------------------------------------------------
    def rollback_iteration(self) -> IterationRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        r_m, J = self.residual_and_jacobian()
        if not np.all(np.isfinite(r_m)):
            raise TrainingAborted("non-finite residuals")
        E_m = nd.residual_energy(r_m)
        K = nd.ntk_gram(J).K
        sat = 0

        # discriminator substep, scored by S = r^T K gamma with r, K frozen at theta^m
        noop = cfg.include_noop_candidate
        S_c = []
        best_tok, best_S = None, np.inf
        if noop:
            S0 = nd.first_order_score(r_m, K, self.critic.gamma(r_m))
            S_c.append(S0)
            best_tok, best_S = self.critic.snapshot(), S0
        for _ in range(cfg.d_steps):
            sat += self.critic.step(r_m)
            S = nd.first_order_score(r_m, K, self.critic.gamma(r_m))
            if not np.isfinite(S):
                raise TrainingAborted("non-finite first-order score")
            S_c.append(S)
            if S < best_S:
                best_tok, best_S = self.critic.snapshot(), S
        d_depth = int(np.argmin(S_c)) + (0 if noop else 1)
        self.critic.restore(best_tok, cfg.restore_optimizer)

        # generator substep, scored by residual energy
        E_c = [E_m] if noop else []
        best_g, best_E = (self.gen_snapshot(), E_m) if noop else (None, np.inf)
        gamma = self.critic.gamma(r_m)
        sat += self.critic.gen_saturation(r_m)
        self._gen_update(-(J.T @ gamma))
        for t in range(1, cfg.g_steps + 1):
            tape, rnode, r_t = self.residual_tape()
            E_t = nd.residual_energy(r_t)
            if not np.isfinite(E_t):
                raise TrainingAborted("non-finite residual energy")
            E_c.append(E_t)
            if E_t < best_E:
                best_g, best_E = self.gen_snapshot(), E_t
            if t == cfg.g_steps:
                break
            gamma = self.critic.gamma(r_t)
            sat += self.critic.gen_saturation(r_t)
            self._gen_update(self.gen_grad(tape, rnode, gamma))
        g_depth = int(np.argmin(E_c)) + (0 if noop else 1)
        self.gen_restore(best_g, cfg.restore_optimizer)

        lmin, lmax = self._spectrum(K)
        tr, va = self._mse()
        wall = (time.perf_counter() - t0) * 1e3 if cfg.log_wall_time else float("nan")
        return IterationRecord(self.iteration, float(best_E), float(best_S), E_m, tr, va, g_depth, d_depth,
                               sat, lmin, lmax, wall, cfg.g_steps, cfg.d_steps, S_c, E_c,
                               0 if noop else 1)

    def fixed_iteration(self) -> IterationRecord:
        cfg = self.cfg
        t0 = time.perf_counter()
        r_m, J = self.residual_and_jacobian()
        if not np.all(np.isfinite(r_m)):
            raise TrainingAborted("non-finite residuals")
        E_m = nd.residual_energy(r_m)
        K = nd.ntk_gram(J).K
        sat = 0
        for _ in range(cfg.d_steps):
            sat += self.critic.step(r_m)
        gamma = self.critic.gamma(r_m)
        S = nd.first_order_score(r_m, K, gamma)
        sat += self.critic.gen_saturation(r_m)
        self._gen_update(-(J.T @ gamma))
        for _ in range(cfg.g_steps - 1):
            tape, rnode, r_t = self.residual_tape()
            if not np.all(np.isfinite(r_t)):
                raise TrainingAborted("non-finite residuals")
            gamma = self.critic.gamma(r_t)
            sat += self.critic.gen_saturation(r_t)
            self._gen_update(self.gen_grad(tape, rnode, gamma))
        r_end = pb.residuals(self.problem, self.spec, self.theta, self.pts)
        E = nd.residual_energy(r_end)
        if not np.isfinite(E):
            raise TrainingAborted("non-finite residual energy")
        lmin, lmax = self._spectrum(K)
        tr, va = self._mse()
        wall = (time.perf_counter() - t0) * 1e3 if cfg.log_wall_time else float("nan")
        return IterationRecord(self.iteration, E, S, E_m, tr, va, cfg.g_steps, cfg.d_steps, sat,
                               lmin, lmax, wall, cfg.g_steps, cfg.d_steps, [S], [E], 0)

    def run(self, iterations: Optional[int] = None,
            callback: Optional[Callable[[IterationRecord], None]] = None) -> TrainHistory:
        n = self.cfg.iterations if iterations is None else iterations
        step = self.rollback_iteration if self.cfg.mode == "rollback" else self.fixed_iteration
        for _ in range(n):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    rec = step()
            except (TrainingAborted, dc.NumericalOverflowError, FloatingPointError) as exc:
                self.history.aborted = True
                self.history.abort_reason = str(exc)
                break
            self.history.records.append(rec)
            self.iteration += 1
            if callback is not None:
                callback(rec)
        return self.history

    # -- checkpoints -----------------------------------------------------
    def save(self, path):
        sections = {
            "gen_params": self.theta.values,
            "gen_adam_m": self.gen_adam.m,
            "gen_adam_v": self.gen_adam.v,
            "disc_params": self.critic.values,
            "disc_adam_m": self.critic.adam.m,
            "disc_adam_v": self.critic.adam.v,
        }
        sn = self.critic._sn_flat()
        if sn is not None:
            sections["disc_sn"] = sn
        header = {
            "iteration": self.iteration,
            "gen_spec": self.spec.to_dict(),
            "disc_spec": None if self.critic.mask else self.cfg.disc_spec.to_dict(),
            "gen_adam_step": self.gen_adam.step,
            "disc_adam_step": self.critic.adam.step,
            "gp_rng": _jsonable(self.critic.gp_rng.bit_generator.state),
        }
        nm.save_checkpoint(path, header, sections)

    def load(self, path):
        header, sec = nm.load_checkpoint(path)
        if header["gen_spec"] != self.spec.to_dict():
            raise StructuralError("checkpoint generator spec differs from config")
        want = None if self.critic.mask else self.cfg.disc_spec.to_dict()
        if header["disc_spec"] != want:
            raise StructuralError("checkpoint discriminator spec differs from config")
        self.theta = self.theta.with_values(sec["gen_params"])
        self.gen_adam = AdamState(sec["gen_adam_m"], sec["gen_adam_v"], header["gen_adam_step"], self.cfg.gen_adam)
        self.critic._set(sec["disc_params"].copy())
        self.critic.adam = AdamState(sec["disc_adam_m"], sec["disc_adam_v"], header["disc_adam_step"],
                                     self.cfg.disc_adam)
        if "disc_sn" in sec:
            self.critic.model.sn.load_flat(self.cfg.disc_spec, sec["disc_sn"])
        self.critic.gp_rng.bit_generator.state = header["gp_rng"]
        self.iteration = header["iteration"]


def _jsonable(state):
    if isinstance(state, dict):
        return {k: _jsonable(v) for k, v in state.items()}
    if isinstance(state, np.integer):
        return int(state)
    return state


def train_fixed_ratio(config: TrainConfig) -> TrainHistory:
    if config.mode != "fixed":
        config = replace(config, mode="fixed")
    return Trainer(config).run()


def train_rollback(config: TrainConfig) -> TrainHistory:
    if config.mode != "rollback":
        config = replace(config, mode="rollback")
    return Trainer(config).run()
