import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mwad import wgat, wlae
from mwad.dataset import fill_forward, fit_normalization
from mwad.evaluate import confusion, metrics
from mwad.scoring import classify, threshold_range
from mwad.training import Detector, checkpoint_bytes, checkpoint_from_bytes
from mwad.wgat import GatParams

from conftest import make_dataset

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
small_ints = st.lists(st.integers(-1000, 1000), min_size=1, max_size=60)


@given(arrays(np.float64, st.integers(1, 80), elements=finite), finite, finite)
def test_raising_threshold_never_adds_flags(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    assert classify(scores, hi).sum() <= classify(scores, lo).sum()


@given(small_ints, st.integers(-1000, 1000), st.sampled_from([0.25, 0.5, 2.0, 8.0]), st.integers(-50, 50))
def test_affine_invariance(ints, t, a, b):
    # integer data and power-of-two scales keep every product exact
    s = np.array(ints, dtype=np.float64)
    tau = t + 0.5
    np.testing.assert_array_equal(classify(s, tau), classify(a * s + b, a * tau + b))


@given(arrays(np.float64, st.integers(1, 80), elements=st.floats(-1e3, 1e3)))
def test_threshold_range_shape(scores):
    r = threshold_range(scores)
    assert r.lower <= r.mean <= r.upper
    assert r.candidates.size == (1 if r.degenerate else 51)
    assert np.all(np.diff(r.candidates) >= 0)


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0.1, 5.0))
def test_attention_is_a_distribution(n, w1, seed, scale):
    r = np.random.default_rng(seed)
    p = GatParams(r.normal(size=(n, n)) * scale, r.normal(size=2 * n) * scale, w1=w1)
    alpha = wgat.attention_coefficients(r.normal(size=(w1, n)) * scale, p)
    assert np.all(alpha > 0) and abs(alpha.sum() - 1.0) <= 1e-12


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)))
def test_mae_symmetric_nonnegative(a, b):
    if a.shape != b.shape:
        b = np.resize(b, a.shape)
    e = wlae.mae(a, b)
    np.testing.assert_array_equal(e, wlae.mae(b, a))
    assert np.all(e >= 0)
    assert np.all(wlae.mae(a, a) == 0)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=0, max_size=60))
def test_confusion_partitions_rows(pairs):
    pred = np.array([p for p, _ in pairs], dtype=int)
    act = np.array([a for _, a in pairs], dtype=int)
    c = confusion(pred, act)
    assert c.total == len(pairs)
    m = metrics(c)
    assert all(0.0 <= v <= 1.0 for v in (m.accuracy, m.precision, m.recall, m.f1))


@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
              elements=st.one_of(st.floats(-1e3, 1e3), st.just(np.nan))))
def test_fill_forward_idempotent(x):
    x[0] = np.nan_to_num(x[0])
    once = fill_forward(make_dataset(x))
    assert not np.isnan(once.features).any()
    np.testing.assert_array_equal(fill_forward(once).features, once.features)


@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 4)), elements=st.floats(-1e6, 1e6)))
def test_normalized_train_in_unit_interval(x):
    y = fit_normalization(make_dataset(x)).apply(x)
    assert y.min() >= 0.0 and y.max() <= 1.0


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["adaptive", "manual", "none"]), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4),
       st.integers(1, 4), st.integers(0, 1000))
def test_checkpoint_round_trip(mode, n, w1, w2, h, seed):
    det = Detector.init(n, mode, w1=w1, w2=w2, hidden=h, seed=seed)
    blob = checkpoint_bytes(det)
    assert checkpoint_bytes(checkpoint_from_bytes(blob)) == blob
