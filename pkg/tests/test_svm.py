import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from helpers import oracle_gaps, svm_oracle
from nullboost import svm
from nullboost.svm import DimensionMismatchError, NonFiniteInputError, SvmModel


def zero_model(k, d, bias=None, alpha=None):
    return SvmModel(np.zeros((k, d)), np.zeros(k) if bias is None else np.asarray(bias, float), alpha, 1.0,
                    np.zeros(d), np.ones(d))


def problem(n=40, d=5, k=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.integers(0, k, size=n)


def test_separable_pair():
    x = np.array([[-1.0], [1.0]])
    y = np.array([0, 1])
    m = svm.fit(x, y, 100.0)
    assert svm.accuracy(svm.predict(m, x), y) == 1.0


def test_small_C_collapses_to_bias():
    x, _ = problem()
    y = np.repeat([0, 1, 2], [10, 20, 10])
    m = svm.fit(x, y, 1e-7, class_count=3)
    assert np.abs(m.weights).max() < 1e-4
    pred = svm.predict(m, x)
    assert np.all(pred == pred[0])
    assert pred[0] == np.argmax(m.bias)


def test_oracle_single_instance_with_backends(backend):
    x, y = problem(20, 5, 3, seed=3)
    m = svm.fit(x, y, 1.0, class_count=3)
    ours = svm.total_objective(m, x, y)
    ref = svm_oracle((x - m.mean) / m.scale, y, 3, 1.0)
    assert (ours - ref) / ref <= 1e-4


def test_oracle_batch():
    assert oracle_gaps(12, seed=7).max() <= 1e-4


def test_predict_examples():
    m = zero_model(3, 4, bias=[1, 0, 0])
    assert np.all(svm.predict(m, np.random.default_rng(0).normal(size=(6, 4))) == 0)


def test_carry_forward_identity():
    x, y = problem(30, 4, 3)
    prev = svm.fit(x, y, 10.0, class_count=3)
    f = svm.margins(prev, x)
    m = zero_model(3, 2, alpha=np.ones(3))
    z = np.random.default_rng(1).normal(size=(30, 2))
    assert np.array_equal(svm.predict(m, z, f), svm.predict(prev, x))
    assert np.allclose(svm.margins(m, z, f), f)


def test_margin_examples():
    m = zero_model(2, 3, bias=[0.5, -0.5])
    assert np.allclose(svm.margins(m, np.ones((4, 3))), [[0.5, -0.5]] * 4)
    one = SvmModel(np.array([[2.0], [0.0]]), np.array([-1.0, 0.0]), None, 1.0, np.zeros(1), np.ones(1))
    assert svm.margins(one, np.array([[1.0]]))[0, 0] == pytest.approx(1.0)


def test_ties_break_to_lowest_class():
    m = zero_model(3, 1, bias=[0, 1, 1])
    assert svm.predict(m, np.zeros((2, 1))).tolist() == [1, 1]


def test_zero_one_loss():
    assert svm.zero_one_loss([1, 2, 3], [1, 2, 3]) == 0
    assert svm.zero_one_loss([0, 0], [1, 1]) == 1
    assert svm.zero_one_loss([0, 1, 2, 3], [0, 1, 2, 0]) == 0.25
    with pytest.raises(DimensionMismatchError):
        svm.zero_one_loss([1], [1, 2])


def test_errors():
    x, y = problem()
    with pytest.raises(DimensionMismatchError):
        svm.fit(x, y[:-1], 1.0)
    with pytest.raises(DimensionMismatchError):
        svm.fit(x, y, 1.0, frozen=np.zeros((3, 3)))
    bad = x.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteInputError):
        svm.fit(bad, y, 1.0)
    m = svm.fit(x, y, 1.0)
    with pytest.raises(DimensionMismatchError):
        svm.predict(m, x[:, :2])
    with pytest.raises(DimensionMismatchError):
        svm.predict(m, x, np.zeros((len(x), 3)))


def test_alpha_presence():
    x, y = problem()
    assert svm.fit(x, y, 1.0).alpha is None
    assert svm.fit(x, y, 1.0, frozen=np.zeros((len(x), 3))).alpha.shape == (3,)


def test_standardization_uses_fit_statistics():
    x, y = problem()
    x[:, 2] = 7.0  # constant column
    m = svm.fit(x, y, 1.0)
    assert m.scale[2] == 1.0
    assert np.allclose(m.mean, x.mean(axis=0))


def test_monotone_traces(backend):
    for seed in range(5):
        x, y = problem(60, 30, 4, seed)
        m = svm.fit(x, y, 50.0, class_count=4)
        for tr in m.traces:
            assert np.all(np.diff(tr) <= 1e-12 * max(1.0, abs(tr[0])))


def test_large_width_uses_iterative_path():
    x, y = problem(80, 450, 3, seed=2)
    m = svm.fit(x, y, 0.5, class_count=3)
    ref = svm_oracle((x - m.mean) / m.scale, y, 3, 0.5)
    assert (svm.total_objective(m, x, y) - ref) / ref <= 1e-4


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(3, 25), st.integers(1, 6)),
                  elements=st.floats(-50, 50, allow_nan=False)),
       st.integers(0, 2**31), st.floats(1e-3, 1e3))
def test_objective_below_zero_model(x, seed, C):
    y = np.random.default_rng(seed).integers(0, 3, size=len(x))
    m = svm.fit(x, y, C, class_count=3)
    zero = SvmModel(np.zeros_like(m.weights), np.zeros(3), None, C, m.mean, m.scale)
    assert svm.total_objective(m, x, y) <= svm.total_objective(zero, x, y) + 1e-9


def test_warm_start_reaches_same_optimum():
    x, y = problem(50, 6, 3, seed=4)
    cold = svm.fit(x, y, 3.0, class_count=3)
    warm = svm.fit(x, y, 3.0, class_count=3, init=svm.fit(x, y, 0.1, class_count=3))
    assert svm.total_objective(warm, x, y) == pytest.approx(svm.total_objective(cold, x, y), rel=1e-5)


def test_deterministic():
    x, y = problem()
    a, b = svm.fit(x, y, 1.0), svm.fit(x, y, 1.0)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)


def test_save_load(tmp_path):
    x, y = problem()
    m = svm.fit(x, y, 2.0, frozen=np.ones((len(x), 3)))
    svm.save_model(m, tmp_path / "m.npz")
    r = svm.load_model(tmp_path / "m.npz")
    for name in ("weights", "bias", "alpha", "mean", "scale"):
        assert np.array_equal(getattr(r, name), getattr(m, name))
    assert r.C == m.C
    assert np.array_equal(svm.margins(r, x, np.ones((len(x), 3))), svm.margins(m, x, np.ones((len(x), 3))))


def test_raw_weights_match_margins():
    x, y = problem()
    m = svm.fit(x, y, 1.0)
    w, b = m.raw_weights()
    assert np.allclose(x @ w.T + b, svm.margins(m, x), atol=1e-10)
