import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.svm import SVR

from nira.blstm import BlstmModel, blstm_forward, temporal_average
from nira.errors import DegenerateTargets, EmptyDataset, FormatError, ModelShapeMismatch, TooFewSpeechFrames
from nira.svr import (
    COMPONENTS,
    EstimateVector,
    build_combiner_inputs,
    dumps_svr,
    fit_svr,
    hyper_grid,
    kkt_residual,
    lipschitz_bound,
    load_svr,
    loads_svr,
    minmax_apply,
    save_svr,
    svr_predict,
    svr_train,
)


def _data(seed, n=60):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 5, size=(n, 4))
    y = np.sin(x[:, 0]) + 0.3 * x[:, 1] + 0.1 * rng.standard_normal(n)
    return x, y


@pytest.mark.parametrize("C,gamma,eps", [(1, 0.1, 0.05), (10, 1, 0.01), (100, 1, 0.1), (10, 0.01, 0.02)])
def test_matches_sklearn(C, gamma, eps):
    x, y = _data(0)
    model = fit_svr(x, y, C, gamma, eps)
    xs = minmax_apply(x, model.scale_min, model.scale_max)
    ref = SVR(kernel="rbf", C=C, gamma=gamma, epsilon=eps, tol=1e-10).fit(xs, y)
    probe = np.random.default_rng(1).uniform(-2, 5, size=(30, 4))
    np.testing.assert_allclose(svr_predict(model, probe), ref.predict(minmax_apply(probe, model.scale_min, model.scale_max)),
                               atol=1e-4)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([1.0, 10.0, 100.0]), st.sampled_from([0.01, 0.1, 1.0]),
       st.sampled_from([0.01, 0.1]))
def test_kkt_and_feasibility(seed, C, gamma, eps_frac):
    x, y = _data(seed, n=40)
    eps = eps_frac * float(np.std(y))
    model = fit_svr(x, y, C, gamma, eps)
    assert np.all(np.abs(model.coef) <= C * (1 + 1e-12))
    assert abs(model.coef.sum()) <= 1e-8 * C
    assert kkt_residual(model, x, y) < 1e-3 * C
    free = np.abs(model.coef) < C * (1 - 1e-9)
    sv_raw = model.support_vectors * np.where(model.scale_max > model.scale_min,
                                              model.scale_max - model.scale_min, 1) + model.scale_min
    targets = {tuple(np.round(r, 9)): t for r, t in zip(x, y)}
    for v, is_free in zip(sv_raw, free):
        if is_free:
            t = targets[tuple(np.round(v, 9))]
            assert abs(svr_predict(model, v) - t) <= eps + 1e-3


def test_linear_teacher():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, size=(80, 4))
    y = 3.0 * x[:, 0] + 1.0
    eps = 0.01 * y.std()
    model = fit_svr(x, y, 100, 1.0, eps)
    rmsd = np.sqrt(np.mean((svr_predict(model, x) - y) ** 2))
    assert rmsd < eps + 0.05 * y.std()


def test_constant_targets():
    x, _ = _data(3, n=30)
    model = fit_svr(x, np.full(30, 2.5), 10, 0.1, 0.01)
    np.testing.assert_allclose(svr_predict(model, np.random.default_rng(0).normal(size=(10, 4))), 2.5, atol=1e-9)
    vectors = [EstimateVector(f"u{i}", tuple(r), 2.5) for i, r in enumerate(x)]
    with pytest.raises(DegenerateTargets):
        svr_train(vectors, vectors[:5])


def test_flat_kernel_limit():
    x, y = _data(4)
    model = fit_svr(x, y, 10, 1e-9, 0.01)
    pred = svr_predict(model, np.random.default_rng(5).uniform(-2, 5, size=(50, 4)))
    assert np.ptp(pred) < 1e-6 * np.ptp(y)


def test_lipschitz_bound():
    x, y = _data(6)
    model = fit_svr(x, y, 100, 1.0, 0.01)
    L = lipschitz_bound(model)
    rng = np.random.default_rng(7)
    a = rng.uniform(-3, 6, size=(2000, 4))
    b = a + rng.normal(scale=rng.choice([1e-3, 0.1, 1.0], size=(2000, 1)), size=(2000, 4))
    lhs = np.abs(svr_predict(model, a) - svr_predict(model, b))
    assert np.all(lhs <= L * np.linalg.norm(a - b, axis=1) + 1e-12)


def test_order_invariance():
    x, y = _data(8)
    perm = np.random.default_rng(9).permutation(y.size)
    a = fit_svr(x, y, 10, 1.0, 0.02)
    b = fit_svr(x[perm], y[perm], 10, 1.0, 0.02)
    probe = np.random.default_rng(10).uniform(-2, 5, size=(40, 4))
    np.testing.assert_allclose(svr_predict(a, probe), svr_predict(b, probe), atol=1e-6)


def _vectors(seed, n):
    x, y = _data(seed, n)
    return [EstimateVector(f"u{seed}-{i}", tuple(r), float(t)) for i, (r, t) in enumerate(zip(x, y))]


def test_grid_search_selects_minimum():
    train_set, val = _vectors(11, 40), _vectors(12, 20)
    model, table = svr_train(train_set, val)
    assert len(table) == 18 == len(hyper_grid(1.0))
    best = min(table, key=lambda r: r["validation_rmsd"])
    assert (model.C, model.gamma, model.epsilon) == (best["C"], best["gamma"], best["epsilon"])
    assert model.meta["validation_rmsd"] == best["validation_rmsd"]


def test_too_few_vectors():
    with pytest.raises(EmptyDataset):
        svr_train(_vectors(13, 19), _vectors(14, 5))


def test_estimate_vector_validation():
    with pytest.raises(ValueError):
        EstimateVector("u", (1.0, 2.0, 3.0), 0.0)
    with pytest.raises(ValueError):
        EstimateVector("u", (1.0, 2.0, 3.0, np.inf), 0.0)


def _feature_items(rng, n=6):
    items = []
    for i in range(n):
        values = rng.normal(size=(int(rng.integers(3, 12)), 5))
        items.append((f"utt{i}", (lambda v=values: v), float(i)))
    return items


def test_combiner_inputs_identical_models():
    rng = np.random.default_rng(15)
    model = BlstmModel.init(5, (4,), seed=1)
    vectors = build_combiner_inputs([model] * 4, _feature_items(rng))
    for e in vectors:
        assert len(set(e.v)) == 1


def test_combiner_inputs_cross_check_and_skip():
    rng = np.random.default_rng(16)
    models = [BlstmModel.init(5, (4,), seed=s) for s in range(4)]
    for v in models[2].weights.values():
        v[...] = 0.0
    models[2].target_mean = 0.9
    items = _feature_items(rng)

    def broken():
        raise TooFewSpeechFrames("silent")

    items.insert(2, ("bad", broken, 1.0))
    vectors = build_combiner_inputs(models, items)
    assert [e.utterance_id for e in vectors] == [u for u, _, _ in items if u != "bad"]
    lookup = {u: load for u, load, _ in items}
    for e in vectors:
        feats = lookup[e.utterance_id]()
        expected = [temporal_average(blstm_forward(m, feats)) for m in models]
        assert list(e.v) == expected
        assert e.v[2] == pytest.approx(0.9, abs=1e-12)


def test_combiner_inputs_need_matching_models():
    a, b = BlstmModel.init(5, (4,)), BlstmModel.init(5, (4,), target="drr")
    with pytest.raises(ModelShapeMismatch):
        build_combiner_inputs([a, a, a, b], [])
    with pytest.raises(ModelShapeMismatch):
        build_combiner_inputs([a, a, a], [])


def test_svr_file_roundtrip(tmp_path):
    x, y = _data(17)
    model = fit_svr(x, y, 10, 0.1, 0.05)
    save_svr(tmp_path / "f.svr", model)
    back = load_svr(tmp_path / "f.svr")
    assert back.components == COMPONENTS
    probe = np.random.default_rng(18).normal(size=(10, 4))
    assert svr_predict(back, probe).tobytes() == svr_predict(model, probe).tobytes()
    data = dumps_svr(model)
    with pytest.raises(FormatError):
        loads_svr(b"BADMAGIC" + data[8:])
