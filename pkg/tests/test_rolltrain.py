import numpy as np
import pytest

from advpinn import advobj as ao
from advpinn import netmod as nm
from advpinn import ntkdiag as nd
from advpinn import rolltrain as rt
from advpinn.diffcore import StructuralError

SMALL_GEN = nm.NetworkSpec(2, (6, 6), residual_links=True)
SMALL_DISC = nm.NetworkSpec(1, (6, 6))


def small_cfg(**kw):
    base = dict(problem="laplace1", gen_spec=SMALL_GEN, disc_spec=SMALL_DISC, grid=4,
                iterations=3, g_steps=3, d_steps=3, spectrum_every=0)
    base.update(kw)
    return rt.TrainConfig(**base)


# -- Adam ----------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    st = rt.AdamState.zeros(3, rt.AdamConfig(lr=0.01))
    st, p = rt.adam_step(st, np.zeros(3), np.array([2.0, -0.5, 1e-3]))
    # bias correction makes the first step lr * sign(g) up to eps
    assert np.allclose(p, [-0.01, 0.01, -0.01], rtol=1e-4)
    assert st.step == 1


def test_adam_zero_gradient_is_noop():
    st = rt.AdamState.zeros(2)
    st, p = rt.adam_step(st, np.array([1.0, 2.0]), np.zeros(2))
    assert p.tolist() == [1.0, 2.0]


def test_adam_against_reference_loop():
    cfg = rt.AdamConfig(lr=0.05, beta1=0.8, beta2=0.95, eps=1e-6)
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((6, 4))
    st, p = rt.AdamState.zeros(4, cfg), np.ones(4)
    m = v = np.zeros(4)
    q = np.ones(4)
    for t, g in enumerate(grads, 1):
        st, p = rt.adam_step(st, p, g)
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        q = q - 0.05 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.95**t)) + 1e-6)
    assert np.allclose(p, q, rtol=1e-14, atol=1e-15)


def test_adam_decay_schedule():
    cfg = rt.AdamConfig(lr=1.0, decay_gamma=0.5, decay_step=3)
    assert [cfg.lr_at(s) for s in range(7)] == [1, 1, 1, 0.5, 0.5, 0.5, 0.25]
    assert rt.AdamConfig(lr=0.3).lr_at(1000) == 0.3


def test_adam_shape_mismatch():
    with pytest.raises(StructuralError):
        rt.adam_step(rt.AdamState.zeros(3), np.zeros(2), np.zeros(2))


# -- snapshots -----------------------------------------------------------------

def test_snapshot_restore_roundtrip_and_isolation():
    vals = np.arange(5.0)
    st = rt.AdamState(np.ones(5), np.full(5, 2.0), 7)
    tok = rt.snapshot([(0, 2, 2)], vals, st)
    vals[0] = 99.0
    st.m[:] = -1.0
    v2, a2, extra = rt.restore(tok, [(0, 2, 2)])
    assert v2.tolist() == [0, 1, 2, 3, 4] and a2.m.tolist() == [1.0] * 5 and a2.step == 7
    assert extra is None
    v2[1] = 50.0
    assert rt.restore(tok, [(0, 2, 2)])[0][1] == 1.0


def test_restore_into_foreign_architecture():
    tok = rt.snapshot([(0, 2, 2)], np.zeros(6), rt.AdamState.zeros(6))
    with pytest.raises(StructuralError):
        rt.restore(tok, [(0, 2, 3)])


def test_trainer_snapshot_is_exact():
    tr = rt.Trainer(small_cfg())
    tok = tr.gen_snapshot()
    tr.run(1)
    assert not tr.gen_snapshot().same_as(tok)
    tr.gen_restore(tok)
    assert tr.gen_snapshot().same_as(tok)


# -- configuration -------------------------------------------------------------

def test_config_rejections():
    with pytest.raises(ValueError):
        small_cfg(mode="alternate")
    with pytest.raises(ValueError):
        small_cfg(g_steps=0)
    with pytest.raises(ValueError):
        small_cfg(iterations=-1)
    with pytest.raises(ValueError):
        small_cfg(disc_spec=None)
    small_cfg(disc_spec=None, variant=ao.GanVariant("sa_mask"))


def test_zero_iterations_gives_empty_history():
    h = rt.train_rollback(small_cfg(iterations=0))
    assert len(h) == 0 and not h.aborted and h.rows() == []


# -- fixed ratio ---------------------------------------------------------------

@pytest.mark.parametrize("g,d", [(1, 1), (3, 1), (1, 4)])
def test_fixed_ratio_update_counts(g, d):
    tr = rt.Trainer(small_cfg(mode="fixed", g_steps=g, d_steps=d))
    h = tr.run(2)
    assert tr.gen_adam.step == 2 * g
    assert tr.critic.adam.step == 2 * d
    assert all(r.g_updates == g and r.d_updates == d for r in h.records)


def test_fixed_ratio_E_is_end_of_iteration_energy():
    tr = rt.Trainer(small_cfg(mode="fixed"))
    rec = tr.run(1).records[0]
    r, _ = tr.residual_and_jacobian()
    assert rec.E == nd.residual_energy(r)


def test_lsgan_gamma_zero_leaves_generator_unchanged():
    # a critic that outputs exactly 1 everywhere has zero lsgan weights
    cfg = small_cfg(mode="fixed", variant=ao.GanVariant("lsgan"), disc_adam=rt.AdamConfig(lr=0.0))
    tr = rt.Trainer(cfg)
    W = tr.critic.model.params
    tr.critic._set(nm.zeros(cfg.disc_spec).values)
    last = len(W.layout) - 1
    vals = tr.critic.values.copy()
    off = sum(i * o + o for _, i, o in W.layout[:last])
    vals[off + W.layout[last][1] * W.layout[last][2]] = 1.0  # output bias
    tr.critic._set(vals)
    before = tr.theta.values.copy()
    tr.run(2)
    assert np.array_equal(tr.theta.values, before)


# -- rollback ------------------------------------------------------------------

def _replay(cfg):
    """Re-run one rollback iteration by hand and return the candidate scores."""
    tr = rt.Trainer(cfg)
    r_m, J = tr.residual_and_jacobian()
    K = nd.ntk_gram(J).K
    S = []
    toks = []
    for _ in range(cfg.d_steps):
        tr.critic.step(r_m)
        S.append(nd.first_order_score(r_m, K, tr.critic.gamma(r_m)))
        toks.append(tr.critic.snapshot())
    k = int(np.argmin(S))
    tr.critic.restore(toks[k])
    gamma = tr.critic.gamma(r_m)
    tr._gen_update(-(J.T @ gamma))
    E = []
    for t in range(1, cfg.g_steps + 1):
        tape, rnode, r_t = tr.residual_tape()
        E.append(nd.residual_energy(r_t))
        if t < cfg.g_steps:
            tr._gen_update(tr.gen_grad(tape, rnode, tr.critic.gamma(r_t)))
    return S, E


@pytest.mark.parametrize("family", ["lsgan", "wgan_gp"])
def test_rollback_matches_hand_replay(family):
    cfg = small_cfg(variant=ao.GanVariant(family), d_steps=4, g_steps=4)
    S, E = _replay(cfg)
    rec = rt.Trainer(cfg).run(1).records[0]
    assert rec.S_candidates == S
    assert rec.E_candidates == E
    assert rec.S == min(S) and rec.E == min(E)
    assert rec.accepted_d_depth == int(np.argmin(S)) + 1
    assert rec.accepted_g_depth == int(np.argmin(E)) + 1


def test_rollback_restores_argmin_state():
    tr = rt.Trainer(small_cfg(d_steps=5, g_steps=5))
    rec = tr.run(1).records[0]
    r, _ = tr.residual_and_jacobian()
    assert nd.residual_energy(r) == rec.E
    # optimizer state travels with the snapshot: one Adam step per accepted depth
    assert tr.gen_adam.step == rec.accepted_g_depth
    assert tr.critic.adam.step == rec.accepted_d_depth


def test_rollback_without_optimizer_restore_keeps_moments():
    tr = rt.Trainer(small_cfg(d_steps=5, g_steps=5, restore_optimizer=False))
    tr.run(1)
    assert tr.gen_adam.step == 5 and tr.critic.adam.step == 5


def test_noop_candidate_makes_energy_monotone():
    tr = rt.Trainer(small_cfg(include_noop_candidate=True, iterations=6))
    h = tr.run()
    E = [r.E for r in h.records]
    E0 = h.records[0].E_start
    assert all(b <= a for a, b in zip([E0] + E, E))
    for rec in h.records:
        assert rec.E <= rec.E_start
        assert rec.candidate_offset == 0
        assert rec.E_candidates[0] == rec.E_start


def test_training_is_deterministic():
    a = rt.train_rollback(small_cfg(variant=ao.GanVariant("gan")))
    b = rt.train_rollback(small_cfg(variant=ao.GanVariant("gan")))
    assert [r.E for r in a.records] == [r.E for r in b.records]
    assert [r.S_candidates for r in a.records] == [r.S_candidates for r in b.records]


def test_mask_critic_training_runs():
    cfg = small_cfg(variant=ao.GanVariant("sa_mask"), disc_spec=None)
    h = rt.train_rollback(cfg)
    assert len(h) == 3 and not h.aborted
    assert np.all(np.isfinite(h.column("E")))


def test_checkpoint_resume_matches_continuous_run(tmp_path):
    cfg = small_cfg(variant=ao.GanVariant("wgan_gp"), iterations=4)
    full = rt.Trainer(cfg)
    full.run()
    part = rt.Trainer(cfg)
    part.run(2)
    part.save(tmp_path / "c.apinn")
    resumed = rt.Trainer(cfg)
    resumed.load(tmp_path / "c.apinn")
    resumed.run(2)
    assert np.array_equal(resumed.theta.values, full.theta.values)
    assert np.array_equal(resumed.critic.values, full.critic.values)


def test_checkpoint_rejects_other_architecture(tmp_path):
    rt.Trainer(small_cfg()).save(tmp_path / "c.apinn")
    other = rt.Trainer(small_cfg(gen_spec=nm.NetworkSpec(2, (5, 5), residual_links=True)))
    with pytest.raises(StructuralError):
        other.load(tmp_path / "c.apinn")


def test_overflow_aborts_cleanly():
    cfg = small_cfg(mode="fixed", gen_adam=rt.AdamConfig(lr=1e200), iterations=5)
    h = rt.Trainer(cfg).run()
    assert h.aborted and len(h) < 5
