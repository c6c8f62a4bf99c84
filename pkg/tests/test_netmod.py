import numpy as np
import pytest

from advpinn import diffcore as dc
from advpinn import netmod as nm
from advpinn.diffcore import StructuralError


def test_param_length_matches_layout():
    spec = nm.NetworkSpec(2, (5, 3))
    assert spec.num_params() == 3 * 5 + 6 * 3 + 4 * 1
    assert nm.init(spec, 0).values.size == spec.num_params()


def test_invalid_specs():
    with pytest.raises(StructuralError):
        nm.NetworkSpec(2, (4, 0))
    with pytest.raises(StructuralError):
        nm.NetworkSpec(2, (4, 5), residual_links=True)
    with pytest.raises(StructuralError):
        nm.ParamVector(np.zeros(3), nm.NetworkSpec(1, (2,)).layout())


def test_init_deterministic_and_zero_bias():
    spec = nm.NetworkSpec(2, (8, 8))
    a, b = nm.init(spec, 42), nm.init(spec, 42)
    assert np.array_equal(a.values, b.values)
    for i in range(len(a.layout)):
        _, bias = a.layer(i)
        assert np.all(bias == 0)


def test_init_weight_variance():
    spec = nm.NetworkSpec(100, (100,))
    W, _ = nm.init(spec, 1).layer(0)
    assert abs(W.var() - 1 / 100) < 0.1 / 100


def test_zero_network():
    spec = nm.NetworkSpec(2, (4, 4))
    x = np.array([[0.3, 0.1], [2.0, -1.0]])
    assert np.all(nm.forward(spec, nm.zeros(spec), x) == 0)
    sspec = nm.NetworkSpec(2, (4, 4), sigmoid_output=True)
    assert np.all(nm.forward(sspec, nm.zeros(sspec), x) == 0.5)


def test_identity_linear_layer():
    # hidden layers always carry tanh, so check the affine layer on its own
    pv = nm.ParamVector(np.array([1.0, 0.0]), [(0, 1, 1)])
    out = dc.linear(dc.Jet.constant(np.array([[0.7], [-2.0]])), *pv.layer(0))
    assert out.data[0, :, 0].tolist() == [0.7, -2.0]


def test_hand_computed_2_2_1():
    spec = nm.NetworkSpec(2, (2,))
    W1 = np.array([[0.5, -1.0], [0.25, 2.0]])
    b1 = np.array([0.1, -0.2])
    W2 = np.array([[1.5], [-0.5]])
    b2 = np.array([0.3])
    p = nm.ParamVector(np.concatenate([W1.ravel(), b1, W2.ravel(), b2]), spec.layout())
    x = np.array([0.4, -0.6])
    h0 = np.tanh(0.4 * 0.5 + (-0.6) * 0.25 + 0.1)
    h1 = np.tanh(0.4 * -1.0 + (-0.6) * 2.0 - 0.2)
    want = 1.5 * h0 - 0.5 * h1 + 0.3
    assert abs(nm.forward(spec, p, x) - want) < 1e-12


def test_residual_links_with_zero_weights():
    spec = nm.NetworkSpec(2, (3, 3, 3), residual_links=True)
    assert np.all(nm.forward(spec, nm.zeros(spec), np.ones((4, 2))) == 0)


def test_forward_is_pure():
    spec = nm.NetworkSpec(2, (5, 5), residual_links=True)
    p = nm.init(spec, 3)
    x = np.random.default_rng(0).uniform(size=(7, 2))
    before = p.values.copy()
    assert np.array_equal(nm.forward(spec, p, x), nm.forward(spec, p, x))
    assert np.array_equal(before, p.values)


def test_spectral_normalize_diagonal():
    out = nm.spectral_normalize(np.diag([3.0, 1.0]), iters=50)
    assert np.allclose(out, np.diag([1.0, 1 / 3]), atol=1e-6)


def test_spectral_normalize_orthogonal_and_idempotent():
    q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((4, 4)))
    assert np.allclose(nm.spectral_normalize(q, iters=50), q, atol=1e-6)
    A = np.random.default_rng(3).standard_normal((5, 3))
    once = nm.spectral_normalize(A, iters=50)
    twice = nm.spectral_normalize(once, iters=50)
    assert np.max(np.abs(once - twice)) < 1e-6


def test_spectral_state_bounds_effective_sigma():
    spec = nm.NetworkSpec(1, (6, 6), spectral_norm=True)
    p = nm.init(spec, 4)
    st = nm.SpectralState()
    st.refresh(p, 20)
    for i in range(len(p.layout)):
        W, _ = p.layer(i)
        u, v = st.vectors[i]
        eff = W / float(u @ W @ v)
        assert np.linalg.svd(eff, compute_uv=False)[0] <= 1 + 1e-3


def test_fused_pass_matches_tape():
    spec = nm.NetworkSpec(1, (6, 6), residual_links=True, spectral_norm=True)
    p = nm.init(spec, 5)
    sn = nm.SpectralState()
    sn.refresh(p, 20)
    x = np.random.default_rng(1).standard_normal(9)
    seed = np.random.default_rng(2).standard_normal(9)
    out, g = nm.score_and_grad(spec, p, x, seed, sn)
    t = dc.Tape()
    node = nm.forward_jet(spec, p, dc.Jet.constant(x.reshape(-1, 1)), leaves=t.watch(p), sn=sn)
    leaves = t.backward(node, seed.reshape(1, -1, 1))
    assert np.array_equal(out, node.value.data[0, :, 0])
    assert np.allclose(g, dc._scatter(t, leaves, p), rtol=1e-13, atol=1e-15)


def test_checkpoint_roundtrip(tmp_path):
    a = np.random.default_rng(0).standard_normal(17)
    nm.save_checkpoint(tmp_path / "c.apinn", {"iteration": 3}, {"a": a, "b": np.arange(4.0)})
    hdr, sec = nm.load_checkpoint(tmp_path / "c.apinn")
    assert hdr["iteration"] == 3
    assert np.array_equal(sec["a"], a) and np.array_equal(sec["b"], np.arange(4.0))
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(StructuralError):
        nm.load_checkpoint(tmp_path / "bad")
