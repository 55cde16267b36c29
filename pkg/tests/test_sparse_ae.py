import mpmath
import numpy as np
import pytest

from dsaeem.errors import ConfigError
from dsaeem.sparse_ae import (AEConfig, AEWeights, ae_gradient, ae_loss, ae_loss_terms, decode,
                              encode, group_sparsity, init_weights, kl_sparsity,
                              train_autoencoder)


def random_unit(rng, d=5, h=3, scale=1.0):
    return AEWeights(rng.normal(scale=scale, size=(h, d)), rng.normal(scale=0.5, size=h),
                     rng.normal(scale=scale, size=(d, h)), rng.normal(scale=0.5, size=d))


def test_encode_zero_weights_half(rng):
    w = AEWeights(np.zeros((3, 5)), np.zeros(3), np.zeros((5, 3)), np.zeros(5))
    H = encode(w, rng.random((5, 7)))
    assert np.all(H == 0.5)


def test_encode_saturation():
    w = AEWeights(np.zeros((1, 1)), np.array([10.0]), np.zeros((1, 1)), np.zeros(1))
    assert abs(encode(w, np.array([[0.3]]))[0, 0] - 1.0) < 1e-4


def test_shapes_and_range(rng):
    w = random_unit(rng)
    X = rng.random((5, 7))
    H = encode(w, X)
    Xr = decode(w, H)
    assert H.shape == (3, 7) and Xr.shape == (5, 7)
    assert np.all((H > 0) & (H < 1)) and np.all((Xr > 0) & (Xr < 1))
    with pytest.raises(ValueError):
        encode(w, rng.random((4, 7)))


def kl_oracle(rho, rh):
    rho, rh = mpmath.mpf(rho), mpmath.mpf(rh)
    return rho * mpmath.log(rho / rh) + (1 - rho) * mpmath.log((1 - rho) / (1 - rh))


def test_kl_examples():
    assert kl_sparsity(0.05, [0.05, 0.05]) == 0.0
    assert kl_sparsity(0.05, [0.5]) == pytest.approx(float(kl_oracle(0.05, 0.5)), rel=1e-14)
    assert kl_sparsity(0.05, [0.5]) > kl_sparsity(0.05, [0.3])


def test_kl_clamps_and_flags():
    v, flag = kl_sparsity(0.05, [0.0, 1.0], return_flag=True)
    assert flag and np.isfinite(v)


@pytest.mark.parametrize("rho", [0.02, 0.05, 0.1, 0.5])
def test_kl_monotone_both_sides(rho):
    below = np.linspace(1e-4, rho, 50)
    above = np.linspace(rho, 1 - 1e-4, 50)
    kb = [kl_sparsity(rho, [r]) for r in below]
    ka = [kl_sparsity(rho, [r]) for r in above]
    assert np.all(np.diff(kb) < 0) and np.all(np.diff(ka) > 0)
    assert kb[-1] == 0.0 and ka[0] == 0.0


def test_group_sparsity_examples():
    H = np.array([[1.0, -2.0], [3.0, 0.0]])
    assert group_sparsity(np.zeros((2, 2)), ([0], [1])) == 0.0
    assert group_sparsity(H, ([0], [1])) == 6.0
    assert group_sparsity(H, ([0, 1], [])) == np.abs(H).sum()
    with pytest.raises(ValueError):
        group_sparsity(H, ([0, 1], [1]))
    with pytest.raises(ValueError):
        group_sparsity(H, ([0], []))


def cfg_for(d=5, h=3, **kw):
    base = dict(lam=1e-3, beta=0.7, rho=0.1, group1=(0,), group2=(1, 2))
    base.update(kw)
    return AEConfig(d, h, **base)


def test_loss_zero_configuration():
    # a 1-unit autoencoder whose output equals its input and whose hidden mean equals rho
    X = np.full((1, 4), 0.5)
    w = AEWeights(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    t = ae_loss_terms(w, X, AEConfig(1, 1, lam=1.0, beta=0.0, rho=0.5))
    assert t["reconstruction"] == 0.0 and t["weight_decay"] == 0.0
    cfg = AEConfig(1, 1, lam=1.0, beta=1.0, rho=0.5, use_group_term=False)
    assert ae_loss(w, X, cfg) == 0.0


def test_loss_term_isolation(rng):
    w = random_unit(rng)
    X = rng.random((5, 11))
    plain = ae_loss(w, X, cfg_for(lam=0.0, beta=0.0))
    Xr = decode(w, encode(w, X))
    assert plain == pytest.approx(np.sum((X - Xr) ** 2) / 11, rel=1e-14)


def test_loss_equals_independent_terms(rng):
    w = random_unit(rng)
    X = rng.random((5, 11))
    cfg = cfg_for()
    H = 1 / (1 + np.exp(-(w.W1 @ X + w.b1[:, None])))
    Xr = 1 / (1 + np.exp(-(w.W2 @ H + w.b2[:, None])))
    rec = np.mean(np.sum((X - Xr) ** 2, axis=0))
    wd = cfg.lam * (np.sum(w.W1 ** 2) + np.sum(w.W2 ** 2))
    rh = H.mean(axis=1)
    kl = sum(float(kl_oracle(cfg.rho, r)) for r in rh)
    grp = np.abs(H[[0]]).sum() + np.abs(H[[1, 2]]).sum()
    expected = rec + wd + cfg.beta * (kl + grp / 11)
    assert abs(ae_loss(w, X, cfg) - expected) <= 1e-12


def test_loss_additive_in_coefficients(rng):
    w = random_unit(rng)
    X = rng.random((5, 11))
    lam, beta = 3e-3, 2.0
    f00 = ae_loss(w, X, cfg_for(lam=0.0, beta=0.0))
    fl0 = ae_loss(w, X, cfg_for(lam=lam, beta=0.0))
    f0b = ae_loss(w, X, cfg_for(lam=0.0, beta=beta))
    flb = ae_loss(w, X, cfg_for(lam=lam, beta=beta))
    assert abs(flb - (fl0 + f0b - f00)) <= 1e-12


def fd_gradient(w, X, cfg, h=1e-6):
    out = []
    for arr in w.arrays():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = ae_loss(w, X, cfg)
            arr[idx] = old - h
            fm = ae_loss(w, X, cfg)
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_error(a, b):
    return max(np.max(np.abs(x - y)) / max(np.max(np.abs(y)), 1e-8) for x, y in zip(a, b))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w = random_unit(rng)
    X = rng.random((5, 11))
    g = ae_gradient(w, X, cfg_for())
    assert max_rel_error(g.arrays(), fd_gradient(w, X, cfg_for())) <= 1e-5


def test_gradient_zero_at_reconstruction_minimum():
    X = np.full((1, 4), 0.5)
    w = AEWeights(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    g = ae_gradient(w, X, AEConfig(1, 1, lam=0.0, beta=0.0, rho=0.5))
    assert all(np.all(a == 0) for a in g.arrays())


def test_gradient_linear_in_lambda(rng):
    w = random_unit(rng)
    X = rng.random((5, 11))
    g0 = ae_gradient(w, X, cfg_for(lam=0.0))
    g1 = ae_gradient(w, X, cfg_for(lam=0.01))
    g2 = ae_gradient(w, X, cfg_for(lam=0.02))
    for a0, a1, a2 in zip(g0.arrays(), g1.arrays(), g2.arrays()):
        assert np.allclose(a2 - a0, 2 * (a1 - a0), rtol=1e-12, atol=1e-15)


def test_config_validation():
    with pytest.raises(ConfigError):
        AEConfig(3, 2, rho=1.5)
    with pytest.raises(ConfigError):
        AEConfig(3, 2, group1=(0,), group2=(0, 1))


def test_training_descends_and_is_deterministic(rng):
    X = rng.random((6, 40))
    cfg = AEConfig(6, 4, max_iterations=150, seed=5)
    a = train_autoencoder(X, cfg)
    b = train_autoencoder(X, cfg)
    assert a.history[-1] <= a.history[0]
    assert np.all(np.diff(a.history) <= 0)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    w0 = init_weights(6, 4, np.random.default_rng(5))
    assert a.history[0] == pytest.approx(ae_loss(w0, X, cfg))


def test_training_on_pid_fold_descends(pid):
    from dsaeem.data_io import normalize, stratified_kfold
    plan = stratified_kfold(pid, 5, 0)
    tr, _ = plan.split(0)
    X = normalize(pid.subset(tr))[0].features.T
    cfg = AEConfig(8, 120, lam=1e-5, beta=3.0, rho=0.05, max_iterations=60, use_group_term=False)
    w = train_autoencoder(X, cfg)
    assert w.history[-1] <= w.history[0]


def test_duplicated_column_beats_constant_predictor(rng):
    t = rng.random(60)
    X = np.vstack([t, t])
    const_mse = np.mean(np.sum((X - 0.5) ** 2, axis=0))
    cfg = AEConfig(2, 1, lam=0.0, beta=0.0, max_iterations=3000, learn_rate=2.0, seed=1)
    w = train_autoencoder(X, cfg)
    rec = ae_loss_terms(w, X, cfg)["reconstruction"]
    assert rec < const_mse
