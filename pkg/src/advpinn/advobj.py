"""Adversarial objectives, critics and the induced residual weighting gamma.

Conventions.  A critic maps a scalar input (the residual r, or s = r^2 in
squared mode) to a pre-output score t.  The discriminator maximises
mean P(t_real) + mean Q(t_fake); the generator minimises mean R(t_fake).

``gamma_weights`` follows the additive form gamma_i = -(1/N) R'(f(r_i)) f'(r_i),
so that the residual dynamics read r_dot = K gamma and dL_G/dr = -gamma.
``gamma_squared`` returns the multiplicative form (2/N) r R'(f(r^2)) f'(r^2)
together with the diagonal G~ such that gamma_sq = -G~ r.  :func:`descent_gamma`
gives the weighting in the r_dot = K gamma convention for every family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .diffcore import Jet
from .netmod import NetworkSpec, ParamVector, SpectralState, forward_jet

FAMILIES = ("gan", "lsgan", "wgan_gp", "sa_mask", "la_linear")
MASK_FAMILIES = ("sa_mask", "la_linear")
INPUT_MODES = ("residual", "squared_residual")
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class GanVariant:
    family: str = "lsgan"
    input_mode: str = "residual"
    gp_coefficient: float = 10.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if self.family in MASK_FAMILIES:
            object.__setattr__(self, "input_mode", "squared_residual")

    @property
    def kind(self) -> str:
        """Objective triple in use: gan, lsgan or ipm."""
        if self.family in ("gan", "lsgan"):
            return self.family
        return "ipm"

    @property
    def squared(self) -> bool:
        return self.input_mode == "squared_residual"


def _kind(v) -> str:
    if isinstance(v, GanVariant):
        return v.kind
    if v in ("gan", "lsgan"):
        return v
    if v in ("ipm", "wgan", "wgan_gp", "sa_mask", "la_linear"):
        return "ipm"
    raise ValueError(f"unknown variant {v!r}")


class PQR(NamedTuple):
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    dP: np.ndarray
    dQ: np.ndarray
    dR: np.ndarray
    saturated: int


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def pqr(variant, t) -> PQR:
    """Objective functions and their derivatives at score(s) t."""
    t = np.asarray(t, dtype=np.float64)
    k = _kind(variant)
    if k == "gan":
        s = _sigmoid(t)
        one_minus = _sigmoid(-t)
        sat = int(np.count_nonzero((s < LOG_FLOOR) | (one_minus < LOG_FLOOR)))
        P = np.log(np.maximum(s, LOG_FLOOR))
        Q = np.log(np.maximum(one_minus, LOG_FLOOR))
        return PQR(P, Q, Q.copy(), one_minus, -s, -s, sat)
    if k == "lsgan":
        P = -0.5 * (t - 1.0) ** 2
        Q = -0.5 * t * t
        R = 0.5 * (t - 1.0) ** 2
        return PQR(P, Q, R, -(t - 1.0), -t, t - 1.0, 0)
    one = np.ones_like(t)
    return PQR(t.copy(), -t, -t, one, -one, -one, 0)


def disc_loss(variant, f_real, f_fake, penalty: float = 0.0) -> float:
    """mean P(f_real) + mean Q(f_fake), minus the weighted gradient penalty for wgan_gp."""
    f_real = np.asarray(f_real, dtype=np.float64)
    f_fake = np.asarray(f_fake, dtype=np.float64)
    if f_real.size != f_fake.size:
        raise ValueError("real and fake sample counts differ")
    val = float(np.mean(pqr(variant, f_real).P) + np.mean(pqr(variant, f_fake).Q))
    if isinstance(variant, GanVariant) and variant.family == "wgan_gp":
        val -= variant.gp_coefficient * penalty
    return val


def gen_loss(variant, f_fake) -> float:
    return float(np.mean(pqr(variant, f_fake).R))


def gen_loss_node(variant, f):
    """Record mean R(f) on f's tape (f is an order-0 column node)."""
    k = _kind(variant)
    if k == "gan":
        per = dc.log(dc.sigmoid(dc.neg(f)))
    elif k == "lsgan":
        per = dc.scale(dc.powi(dc.sub(f, 1.0), 2), 0.5)
    else:
        per = dc.neg(f)
    return dc.mean_rows(per)


# ---------------------------------------------------------------------------
# critics

class MLPCritic:
    """Neural critic on scalar inputs."""

    def __init__(self, spec: NetworkSpec, params: ParamVector, sn: SpectralState | None = None):
        if spec.input_dim != 1:
            raise ValueError("critic input dimension must be 1")
        self.spec = spec
        self.params = params
        self.sn = sn if sn is not None else (SpectralState() if spec.spectral_norm else None)

    def score(self, x) -> np.ndarray:
        X = Jet.constant(np.asarray(x, dtype=np.float64).reshape(-1, 1))
        return forward_jet(self.spec, self.params, X, sn=self.sn).data[0, :, 0]

    def score_slope(self, x) -> tuple[np.ndarray, np.ndarray]:
        X = Jet.seed(np.asarray(x, dtype=np.float64).reshape(-1, 1), order=1)
        out = forward_jet(self.spec, self.params, X, sn=self.sn).data
        return out[0, :, 0], out[1, :, 0]

    def record(self, tape: dc.Tape, leaves, x, order: int = 0):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        X = Jet.seed(x, order=1) if order else Jet.constant(x)
        return forward_jet(self.spec, self.params, X, leaves=leaves, sn=self.sn)


def softplus(x):
    return np.logaddexp(0.0, x)


class MaskCritic:
    """Pointwise critic f_i(s) = -1/2 w_i s on the squared residual s = r_i^2.

    sa_mask: w = softplus(lambda); la_linear: w = a (free linear coefficients).
    """

    def __init__(self, family: str, params: np.ndarray):
        if family not in MASK_FAMILIES:
            raise ValueError(f"{family!r} is not a mask family")
        self.family = family
        self.params = np.asarray(params, dtype=np.float64)

    @classmethod
    def initial(cls, family: str, n: int) -> "MaskCritic":
        # unit weights at start
        start = np.log(np.e - 1.0) if family == "sa_mask" else 1.0
        return cls(family, np.full(n, start))

    def weights(self) -> np.ndarray:
        return softplus(self.params) if self.family == "sa_mask" else self.params.copy()

    def weight_slope(self) -> np.ndarray:
        if self.family == "sa_mask":
            return _sigmoid(self.params)
        return np.ones_like(self.params)

    def score(self, s) -> np.ndarray:
        return -0.5 * self.weights() * np.asarray(s, dtype=np.float64)

    def score_slope(self, s) -> tuple[np.ndarray, np.ndarray]:
        w = self.weights()
        return -0.5 * w * np.asarray(s, dtype=np.float64), -0.5 * w

    def loss_grad(self, s) -> np.ndarray:
        """Gradient of the IPM discriminator objective mean(1/2 w_i s_i) in the mask parameters."""
        n = self.params.size
        return 0.5 * np.asarray(s, dtype=np.float64) * self.weight_slope() / n


# ---------------------------------------------------------------------------
# weighting vectors

def gamma_weights(variant, r, disc) -> np.ndarray:
    """gamma_i = -(1/N) R'(f(r_i)) df/dr(r_i) on the pre-output score."""
    if isinstance(variant, GanVariant) and variant.squared:
        raise ValueError("gamma_weights needs residual input mode")
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    f, df = disc.score_slope(r)
    dR = pqr(variant, f).dR
    return -(dR * df) / r.size


def gamma_squared(variant, r, disc) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative weights gamma_sq = (2/N) r R'(f(r^2)) f'(r^2) and the diagonal G~ with gamma_sq = -G~ r."""
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    f, df = disc.score_slope(r * r)
    a = (2.0 / r.size) * pqr(variant, f).dR * df
    return a * r, -a


def constrained_gamma(family: str, r, params) -> np.ndarray:
    """Closed-form gamma_i = -(1/N) w_i r_i for the mask critics."""
    crit = params if isinstance(params, MaskCritic) else MaskCritic(family, params)
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    return -crit.weights() * r / r.size


def descent_gamma(variant: GanVariant, r, disc) -> np.ndarray:
    """Weighting in the r_dot = K gamma convention (equal to -dL_G/dr)."""
    if not variant.squared:
        return gamma_weights(variant, r, disc)
    g_sq, _ = gamma_squared(variant, r, disc)
    return -g_sq


def gradient_penalty(disc, fake, u: np.ndarray) -> float:
    """mean (|f'(x_hat)| - 1)^2 at x_hat_i = (1 - u_i) fake_i (anchor at the real point 0)."""
    x_hat = (1.0 - np.asarray(u)) * np.asarray(fake, dtype=np.float64).reshape(-1)
    _, df = disc.score_slope(x_hat)
    return float(np.mean((np.abs(df) - 1.0) ** 2))


def disc_inputs(variant: GanVariant, r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    return r * r if variant.squared else r
