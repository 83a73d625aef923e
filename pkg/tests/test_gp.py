import numpy as np
import pytest

from skc import kernels as K
from skc.data import Dataset
from skc.gp import GPModel, bic, bic_penalty, exact_logml, exact_logml_grad, lin_slope, pack, unpack

from conftest import finite_diff, grad_close, random_data, random_model


def test_single_point_closed_form():
    k, s, y0 = 0.8, 0.3, 1.7
    model = GPModel(K.se(0, var=k), s)
    got = exact_logml(model, (np.zeros((1, 1)), np.array([y0]))).logml
    want = -0.5 * np.log(2 * np.pi * (k + s)) - y0**2 / (2 * (k + s))
    assert got == pytest.approx(want, rel=1e-14)


def test_zero_targets(rng):
    data = Dataset(rng.normal(size=(20, 1)), np.zeros(20))
    r = exact_logml(GPModel(K.se(0), 0.2), data)
    assert r.nip == 0.0
    assert r.logml == pytest.approx(r.nld - 10 * np.log(2 * np.pi), rel=1e-14)


def test_matches_naive_oracle(rng):
    data = random_data(rng, 50, 2)
    model = random_model(rng, 2, 2)
    C = K.gram(model.kernel, data.X) + model.noise * np.eye(50)
    naive = -0.5 * np.log(np.linalg.det(C)) - 0.5 * data.y @ np.linalg.inv(C) @ data.y - 25 * np.log(2 * np.pi)
    assert exact_logml(model, data).logml == pytest.approx(naive, rel=1e-8)


def test_permutation_invariance(rng):
    data = random_data(rng, 40, 2)
    model = random_model(rng, 2, 3)
    perm = rng.permutation(40)
    a = exact_logml(model, data).logml
    b = exact_logml(model, data.subset(perm)).logml
    assert a == pytest.approx(b, rel=1e-10)


def test_nld_nip_bounds(rng):
    for _ in range(20):
        data = random_data(rng, 30, 2)
        model = random_model(rng, 2, 2)
        r = exact_logml(model, data)
        assert r.nld <= -15 * np.log(model.noise) + 1e-10
        assert r.nip <= 0


def test_gradient_se(rng):
    data = random_data(rng, 30, 1)
    model = GPModel(K.se(0, var=0.9, len=0.6), 0.2)
    g = exact_logml_grad(model, data).grad
    fd = finite_diff(lambda t: exact_logml(unpack(model, t), data).logml, pack(model))
    assert grad_close(g, fd)


def test_gradient_per_variance(rng):
    data = random_data(rng, 30, 1)
    model = GPModel(K.per(0, var=1.3, len=0.8, per=1.1), 0.1)
    g = exact_logml_grad(model, data).grad
    fd = finite_diff(lambda t: exact_logml(unpack(model, t), data).logml, pack(model))
    assert g[0] == pytest.approx(fd[0], rel=1e-4)


def test_nip_gradient_wrt_noise_vanishes_at_zero_targets(rng):
    data = Dataset(rng.normal(size=(15, 1)), np.zeros(15))
    r = exact_logml_grad(GPModel(K.se(0), 0.3), data)
    assert r.grad_nip[-1] == 0.0


def test_gradient_split_sums(rng):
    data = random_data(rng, 25, 2)
    r = exact_logml_grad(random_model(rng, 2, 3), data)
    assert np.allclose(r.grad, r.grad_nld + r.grad_nip)


def test_bic():
    model = GPModel(K.se(0), 0.1)
    data = Dataset(np.zeros((8, 1)), np.zeros(8))
    s = bic(model, data, 0.0)
    assert s.p == 3 and s.value == pytest.approx(-1.5 * np.log(8))
    assert bic_penalty(0, 100) == 0.0
    assert bic_penalty(3, np.e**2) == pytest.approx(3.0)
    assert bic(model, data, 0.0, include_noise=False).p == 2


def test_bic_order_follows_logml_for_equal_p(rng):
    data = random_data(rng, 40, 1)
    models = [GPModel(K.se(0, len=l), 0.1) for l in (0.3, 1.0, 3.0)]
    lml = [exact_logml(m, data).logml for m in models]
    scores = [bic(m, data, v).value for m, v in zip(models, lml)]
    assert np.argsort(scores).tolist() == np.argsort(lml).tolist()


def test_pack_round_trip(rng):
    model = random_model(rng, 2, 3)
    back = unpack(model, pack(model))
    assert np.allclose(pack(back), pack(model), atol=1e-15)
    assert back.noise == pytest.approx(model.noise, rel=1e-15)
    assert len(pack(model)) == K.count_hyperparameters(model.kernel)


def test_noise_must_be_positive():
    with pytest.raises(ValueError):
        GPModel(K.se(0), 0.0)


def test_lin_slope_noise_free_limit(rng):
    x = rng.normal(size=30)
    off = 0.4
    model = GPModel(K.lin(0, var=1.0, off=off), 1e-10)
    assert lin_slope(model, (x, 2 * (x - off))) == pytest.approx(2.0, abs=1e-6)
    assert lin_slope(model, (x, np.zeros(30))) == 0.0


def test_lin_slope_matches_least_squares(rng):
    x = rng.uniform(-1, 1, 200)
    y = 1.5 * x + 0.1 * rng.normal(size=200)
    ols = np.polyfit(x, y, 1)[0]
    model = GPModel(K.Sum((K.lin(0, var=1.0, off=float(x.mean())), K.se(0, var=0.01))), 0.01)
    assert lin_slope(model, (x, y - y.mean()), dim=0) == pytest.approx(ols, rel=0.01)


def test_lin_slope_requires_lin():
    with pytest.raises(ValueError, match="no LIN"):
        lin_slope(GPModel(K.se(0), 0.1), (np.zeros(3), np.zeros(3)))
    with pytest.raises(ValueError, match="dimension 1"):
        lin_slope(GPModel(K.lin(0), 0.1), (np.zeros((3, 2)), np.zeros(3)), dim=1)
