"""Analytic gradients against 64-bit central finite differences (step 1e-3)."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclr.autodiff import Parameter, Tensor, backward
from pclr.autodiff.tensor import record
from pclr.autodiff import functional as F
from pclr.contrastive import ntxent_loss
from pclr.encoder import build_model, encode, forward, layer_graph

from oracles import numeric_gradient, relative_error

TOL = 1e-4
STEP = 1e-3


def _check(loss_fn, arrays):
    """loss_fn() -> scalar Tensor built from ``arrays`` (Parameters); compares every gradient."""
    for p in arrays:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in arrays:
        numeric = numeric_gradient(lambda: float(loss_fn().data), p.data, STEP)
        worst = max(worst, relative_error(p.grad, numeric))
    return worst


def _weights(r, shape):
    return Parameter(r.normal(size=shape))


def _probe(r, shape):
    """Fixed random weights so the scalar loss exercises every output element."""
    return r.normal(size=shape)


def weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
    return record(np.asarray((t.data * w).sum()), (t,), lambda g: (g * w,))


shapes = st.tuples(st.integers(1, 4), st.integers(4, 32), st.integers(1, 8))


@settings(max_examples=15, deadline=None)
@given(shape=shapes, k=st.integers(1, 5), stride=st.sampled_from([1, 2, 4]), seed=st.integers(0, 10**6))
def test_conv_gradient(shape, k, stride, seed):
    r = np.random.default_rng(seed)
    b, length, cin = shape
    x, w = _weights(r, shape), _weights(r, (k, cin, 3))
    proj = _probe(r, (b, -(-length // stride), 3))
    assert _check(lambda: weighted_sum(F.conv1d(x, w, stride), proj), [x, w]) < TOL


@settings(max_examples=15, deadline=None)
@given(shape=shapes, training=st.booleans(), seed=st.integers(0, 10**6))
def test_batchnorm_gradient(shape, training, seed):
    r = np.random.default_rng(seed)
    c = shape[2]
    x = _weights(r, shape)
    x.data *= 2.0
    gamma, beta = _weights(r, (c,)), _weights(r, (c,))
    mm = Parameter(r.normal(size=c), trainable=False)
    mv = Parameter(r.uniform(0.5, 2.0, size=c), trainable=False)
    proj = _probe(r, shape)
    loss = lambda: weighted_sum(F.batch_norm(x, gamma, beta, mm, mv, training, 0.99, 1e-3, update_stats=False), proj)  # noqa: E731
    assert _check(loss, [x, gamma, beta]) < TOL


@settings(max_examples=15, deadline=None)
@given(shape=shapes, pool=st.integers(1, 4), seed=st.integers(0, 10**6))
def test_maxpool_gradient(shape, pool, seed):
    r = np.random.default_rng(seed)
    if shape[1] < pool:
        return
    # distinct values spaced well beyond the difference step, so no window max is ambiguous
    x = Parameter(r.permutation(np.arange(np.prod(shape)) * 0.05).reshape(shape))
    n_out = (shape[1] - pool) // pool + 1
    proj = _probe(r, (shape[0], n_out, shape[2]))
    assert _check(lambda: weighted_sum(F.max_pool1d(x, pool, pool), proj), [x]) < TOL


@settings(max_examples=10, deadline=None)
@given(shape=shapes, seed=st.integers(0, 10**6))
def test_global_average_pool_gradient(shape, seed):
    r = np.random.default_rng(seed)
    x = _weights(r, shape)
    proj = _probe(r, (shape[0], shape[2]))
    assert _check(lambda: weighted_sum(F.global_avg_pool(x), proj), [x]) < TOL


@settings(max_examples=10, deadline=None)
@given(b=st.integers(1, 4), cin=st.integers(1, 8), cout=st.integers(1, 8), seed=st.integers(0, 10**6))
def test_dense_relu_gradient(b, cin, cout, seed):
    r = np.random.default_rng(seed)
    x, w, bias = _weights(r, (b, cin)), _weights(r, (cin, cout)), _weights(r, (cout,))
    proj = _probe(r, (b, cout))
    assert _check(lambda: weighted_sum(F.relu(F.dense(x, w, bias)), proj), [x, w, bias]) < TOL


def test_dense_bias_gradient_is_batch_size():
    x = Tensor(np.arange(6.0).reshape(3, 2))
    w, b = Parameter(np.ones((2, 4))), Parameter(np.zeros(4))
    backward(F.total(F.dense(x, w, b)))
    np.testing.assert_array_equal(b.grad, np.full(4, 3.0))


def test_relu_blocks_gradient_at_negative_preactivation():
    x = Parameter(np.array([[-1.0, 2.0]]))
    backward(F.total(F.relu(x)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0]])


@pytest.mark.parametrize("symmetric", [False, True])
def test_ntxent_gradient(symmetric, rng):
    z = Parameter(rng.normal(size=(4, 8)))
    assert _check(lambda: ntxent_loss(z, 0.1, symmetric), [z]) < TOL


def test_cross_entropy_and_mse_gradients(rng):
    logits = Parameter(rng.normal(size=(5, 2)))
    labels = np.array([0, 1, 1, 0, 1])
    assert _check(lambda: F.softmax_cross_entropy(logits, labels), [logits]) < TOL
    pred = Parameter(rng.normal(size=(5, 1)))
    target = rng.normal(size=5)
    assert _check(lambda: F.mean_squared_error(pred, target), [pred]) < TOL


def activation_pattern(model, trace) -> list[np.ndarray]:
    """ReLU on/off masks and max-pool argmax indices of one forward pass.

    Inside a region where this pattern is constant the network is smooth, so
    central differences are a valid oracle there and only there.
    """
    sig = []
    for layer in layer_graph(model.config, model.head):
        if layer.kind == "relu" or (layer.kind == "dense" and layer.attrs["relu"]):
            sig.append(trace[layer.name].data > 0)
        elif layer.kind == "maxpool":
            src = trace[layer.inputs[0]].data
            b, length, c = src.shape
            pool = layer.attrs["pool"]
            n = (length - pool) // layer.attrs["stride"] + 1
            sig.append(src[:, : n * pool].reshape(b, n, pool, c).argmax(axis=2))
    return sig


def _same(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def composed_gradient_check(config, seed, batch=4, step=STEP):
    """Per trainable tensor: (relative error over pattern-stable elements, stable count, size)."""
    model = build_model(config, seed, dtype=np.float64)
    x = np.random.default_rng(seed + 1).normal(size=(batch, config.input_length, config.leads))

    def run():
        trace = {}
        z = forward(model, x, True, ("projection",), update_stats=False, trace=trace)["projection"]
        return ntxent_loss(z, 0.1), activation_pattern(model, trace)

    loss, base = run()
    backward(loss)
    results = {}
    for name, p in model.params.items():
        if not p.trainable:
            continue
        flat = p.data.reshape(-1)
        numeric = np.zeros(flat.size)
        stable = np.zeros(flat.size, dtype=bool)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, pat_hi = run()
            flat[i] = orig - step
            lo, pat_lo = run()
            flat[i] = orig
            numeric[i] = (float(hi.data) - float(lo.data)) / (2 * step)
            stable[i] = _same(pat_hi, base) and _same(pat_lo, base)
        analytic = p.grad.reshape(-1)
        err = relative_error(analytic[stable], numeric[stable]) if stable.any() else float("nan")
        results[name] = (err, int(stable.sum()), flat.size)
    return results


def _assert_composed(results, min_coverage, every_tensor):
    stable = sum(r[1] for r in results.values())
    total = sum(r[2] for r in results.values())
    assert stable / total >= min_coverage, f"only {stable}/{total} elements had a kink-free interval"
    if every_tensor:
        assert all(r[1] > 0 for r in results.values()), "a parameter tensor had no comparable element"
    compared = {k: r for k, r in results.items() if r[1] > 0}
    worst = max(compared, key=lambda k: compared[k][0])
    assert compared[worst][0] < TOL, (worst, compared[worst])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_encoder_projection_ntxent_gradient(tiny_config, seed):
    results = composed_gradient_check(tiny_config, seed, batch=8)
    assert len(results) == sum(p.trainable for p in build_model(tiny_config, seed).params.values())
    _assert_composed(results, 0.8, every_tensor=False)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_composition_small_step_covers_every_tensor(tiny_config, seed):
    # a shorter interval crosses almost no kinks, so nearly every element is compared
    _assert_composed(composed_gradient_check(tiny_config, seed, step=1e-5), 0.99, every_tensor=True)


def test_moving_statistics_frozen_during_gradient_check(tiny_config):
    model = build_model(tiny_config, 0, dtype=np.float64)
    before = {k: p.data.copy() for k, p in model.params.items() if not p.trainable}
    forward(model, np.ones((2, 256, 3)), True, ("embed",), update_stats=False)
    assert all(np.array_equal(before[k], model.params[k].data) for k in before)
    encode(model, np.ones((2, 256, 3)), training=True)
    assert any(not np.array_equal(before[k], model.params[k].data) for k in before)
