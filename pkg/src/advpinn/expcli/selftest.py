"""Fast invariant checks runnable without the test suite."""

from __future__ import annotations

import numpy as np

from .. import advobj as ao
from .. import diffcore as dc
from .. import kernelflow as kf
from .. import netmod as nm
from .. import pdebench as pb
from ..ntkdiag import violation_stats


def _grad_fd(rng) -> float:
    spec = nm.NetworkSpec(2, (8, 8))
    p = nm.init(spec, int(rng.integers(1 << 30)))
    x = rng.uniform(-1, 1, (5, 2))
    tape = dc.Tape()
    out = dc.sum_rows(nm.forward_jet(spec, p, dc.Jet.constant(x), leaves=tape.watch(p)))
    g = dc.grad_params(out, p)
    h = 1e-6
    fd = np.empty_like(g)
    for k in range(g.size):
        e = np.zeros_like(g)
        e[k] = h
        fp = nm.forward(spec, p.with_values(p.values + e), x, raw=True).sum()
        fm = nm.forward(spec, p.with_values(p.values - e), x, raw=True).sum()
        fd[k] = (fp - fm) / (2 * h)
    return float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))


def _constraints(rng) -> float:
    worst = 0.0
    for name in pb.PROBLEMS:
        prob = pb.make_problem(name)
        spec = nm.NetworkSpec(2, (8, 8), residual_links=True)
        p = nm.init(spec, int(rng.integers(1 << 30)))
        worst = max(worst, pb.constraint_violation(prob, spec, p, seed=0))
    return worst


def _exact_residuals() -> float:
    worst = 0.0
    for name in pb.PROBLEMS:
        prob = pb.make_problem(name)
        if not prob.has_exact:
            continue
        pts = pb.validation_points(prob, 10)
        worst = max(worst, float(np.max(np.abs(pb.exact_residuals(prob, pts)))))
    return worst


def _lsgan_flow() -> float:
    ker = kf.make_support(np.linspace(0.5, 4.5, 9))
    f0 = np.zeros(ker.points.size)
    st = kf.integrate_disc_flow("lsgan", ker, f0, 1.0, 1e-2)
    return float(np.max(np.abs(st.final - kf.lsgan_closed_form(ker, ker.rho, f0, 1.0))))


def _spectral(rng) -> float:
    B = rng.standard_normal((6, 6))
    K = B @ B.T + 0.5 * np.eye(6)
    C = rng.standard_normal((6, 6))
    return kf.spectral_factor_check(K, C + C.T).max_deviation


def _gamma_identity(rng) -> float:
    spec = nm.NetworkSpec(1, (6, 6))
    crit = ao.MLPCritic(spec, nm.init(spec, int(rng.integers(1 << 30))))
    worst = 0.0
    for fam in ("gan", "lsgan", "wgan_gp"):
        v = ao.GanVariant(fam)
        r = rng.standard_normal(7)
        tape = dc.Tape()
        rv = tape.variable(r.reshape(-1, 1))
        loss = ao.gen_loss_node(v, nm.forward_jet(spec, crit.params, rv))
        g = tape.grad_wrt(loss, rv).data.reshape(-1)
        worst = max(worst, float(np.max(np.abs(g + ao.gamma_weights(v, r, crit)))))
    return worst


def _violation() -> float:
    st = violation_stats([-1.0, 2.0, 0.0, 3.0])
    want = (0.5, 2.5, 3.0, 5.0, 13.0)
    return float(np.max(np.abs(np.array(st.as_tuple()) - want)))


CHECKS = (
    ("parameter gradients vs finite differences", lambda rng: _grad_fd(rng), 1e-6),
    ("hard-constraint exactness", lambda rng: _constraints(rng), 1e-12),
    ("exact-solution residuals", lambda rng: _exact_residuals(), 1e-8),
    ("gamma-gradient identity", lambda rng: _gamma_identity(rng), 1e-10),
    ("lsgan flow vs closed form", lambda rng: _lsgan_flow(), 1e-4),
    ("spectral factorization", lambda rng: _spectral(rng), 1e-8),
    ("violation statistics", lambda rng: _violation(), 0.0),
)


def run_selftest(log=print, seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    failed = 0
    for name, fn, tol in CHECKS:
        try:
            val = fn(rng)
            ok = val <= tol
        except Exception as exc:  # report and keep going
            val, ok = exc, False
        failed += not ok
        log(f"{'PASS' if ok else 'FAIL'}  {name}: {val}")
    return 1 if failed else 0
