"""Whole-network forward/backward: exactness, gradients, serialization."""

import io

import numpy as np
import pytest

from eleatt.bptt import (LayerSpec, NetworkSpec, backward_network,
                         central_difference, clone_params, finite_diff_grad,
                         forward_network, grad_check, init_network, leaves,
                         load_network, save_network, zero_grads)
from eleatt.errors import CheckpointError, ConfigError, ShapeError
from eleatt.rng import stream


def _small_spec(kind="gru", mode="element", layers=1, d=3, n=4, k=5,
                dropout=0.0, seed=0):
    specs = []
    d_in = d
    for _ in range(layers):
        specs.append(LayerSpec(kind, mode, d_in, n, dropout))
        d_in = n
    return NetworkSpec(layers=tuple(specs), fc_out=k, seed=seed)


def _randomized_net(spec, seed=0):
    """Params with a non-zero readout so gradients reach every layer."""
    params = init_network(spec)
    rng = stream(seed, "test")
    params.fc_w[:] = rng.normal(0.0, 0.5, size=params.fc_w.shape)
    params.fc_b[:] = rng.normal(0.0, 0.1, size=params.fc_b.shape)
    return params, rng


def test_central_difference_quadratic_probe():
    got = central_difference(lambda t: t * t, 3.0, eps=1e-5)
    assert abs(got - 6.0) <= 1e-9


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(), fc_out=10)
    with pytest.raises(ConfigError):
        NetworkSpec(layers=(LayerSpec("gru", "none", 3, 4),), fc_out=1)
    with pytest.raises(ConfigError):
        # widths must chain
        NetworkSpec(layers=(LayerSpec("gru", "none", 3, 4),
                            LayerSpec("gru", "none", 5, 4)), fc_out=10)
    with pytest.raises(ConfigError):
        LayerSpec("gru", "none", 3, 4, dropout_p=1.0)


def test_untrained_network_loss_is_log_k(backend):
    # zero readout makes every class equally likely regardless of the input
    spec = _small_spec(k=10)
    params = init_network(spec)
    rng = stream(30, "test")
    x = rng.normal(size=(6, 4, 3))
    labels = rng.integers(0, 10, size=6)
    logits, caches, _ = forward_network(spec, params, x, train_mode=True,
                                        backend=backend)
    loss, _ = backward_network(spec, params, caches, labels, backend=backend)
    assert abs(loss - np.log(10.0)) <= 1e-12
    assert np.array_equal(logits, np.zeros((6, 10)))


def test_forward_eval_mode_has_no_caches(backend):
    spec = _small_spec()
    params, rng = _randomized_net(spec)
    x = rng.normal(size=(2, 3, 3))
    logits, caches, trace = forward_network(spec, params, x, backend=backend)
    assert caches is None
    assert logits.shape == (2, 5)
    assert trace.layers() == [0]


def test_forward_input_validation(backend):
    spec = _small_spec()
    params, rng = _randomized_net(spec)
    with pytest.raises(ShapeError):
        forward_network(spec, params, rng.normal(size=(3, 2)), backend=backend)
    with pytest.raises(ShapeError):
        forward_network(spec, params, rng.normal(size=(3, 2, 7)), backend=backend)
    with pytest.raises(ShapeError):
        forward_network(spec, params, rng.normal(size=(0, 2, 3)), backend=backend)
    with pytest.raises(ShapeError):
        forward_network(spec, params, rng.normal(size=(3, 0, 3)), backend=backend)


def test_backward_requires_train_caches(backend):
    spec = _small_spec()
    params, rng = _randomized_net(spec)
    x = rng.normal(size=(3, 2, 3))
    _, caches, _ = forward_network(spec, params, x, backend=backend)
    with pytest.raises(ConfigError):
        backward_network(spec, params, caches, np.zeros(2, dtype=np.int64),
                         backend=backend)


def test_backward_label_mismatch(backend):
    spec = _small_spec()
    params, rng = _randomized_net(spec)
    x = rng.normal(size=(2, 3, 3))
    _, caches, _ = forward_network(spec, params, x, train_mode=True,
                                   backend=backend)
    with pytest.raises(ShapeError):
        backward_network(spec, params, caches, np.zeros(3, dtype=np.int64),
                         backend=backend)


def test_duplicated_sample_keeps_mean_gradient(backend):
    # mean loss over [s, s] equals loss over [s]; gradients match too
    spec = _small_spec(kind="lstm", mode="scalar")
    params, rng = _randomized_net(spec, seed=1)
    x1 = rng.normal(size=(1, 4, 3))
    y1 = np.array([2], dtype=np.int64)
    x2 = np.repeat(x1, 2, axis=0)
    y2 = np.repeat(y1, 2)
    _, c1, _ = forward_network(spec, params, x1, train_mode=True, backend=backend)
    l1, g1 = backward_network(spec, params, c1, y1, backend=backend)
    _, c2, _ = forward_network(spec, params, x2, train_mode=True, backend=backend)
    l2, g2 = backward_network(spec, params, c2, y2, backend=backend)
    assert abs(l1 - l2) <= 1e-12
    for (p1, a), (p2, b) in zip(leaves(g1), leaves(g2)):
        assert p1 == p2
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12, err_msg=p1)


def test_batch_loss_and_grads_are_sample_means(backend):
    spec = _small_spec(mode="softmax_element")
    params, rng = _randomized_net(spec, seed=2)
    x = rng.normal(size=(2, 3, 3))
    y = np.array([1, 4], dtype=np.int64)
    _, cb, _ = forward_network(spec, params, x, train_mode=True, backend=backend)
    lb, gb = backward_network(spec, params, cb, y, backend=backend)
    singles = []
    for b in range(2):
        _, c, _ = forward_network(spec, params, x[b:b + 1], train_mode=True,
                                  backend=backend)
        singles.append(backward_network(spec, params, c, y[b:b + 1],
                                        backend=backend))
    assert abs(lb - 0.5 * (singles[0][0] + singles[1][0])) <= 1e-12
    for (path, g), (_, ga), (_, gz) in zip(leaves(gb), leaves(singles[0][1]),
                                           leaves(singles[1][1])):
        np.testing.assert_allclose(g, 0.5 * (ga + gz), rtol=0, atol=1e-9,
                                   err_msg=path)


def test_forward_is_deterministic(backend):
    spec = _small_spec(layers=2, mode="hidden_element", seed=9)
    p1 = init_network(spec)
    p2 = init_network(spec)
    for (_, a), (_, b) in zip(leaves(p1), leaves(p2)):
        np.testing.assert_array_equal(a, b)
    rng = stream(31, "test")
    x = rng.normal(size=(4, 3, 3))
    l1, _, _ = forward_network(spec, p1, x, backend=backend)
    l2, _, _ = forward_network(spec, p2, x, backend=backend)
    np.testing.assert_array_equal(l1, l2)


def test_leaves_paths_and_clone_independence():
    spec = NetworkSpec(layers=(LayerSpec("gru", "element", 3, 4),
                               LayerSpec("srnn", "none", 4, 2)), fc_out=5)
    params = init_network(spec)
    paths = [p for p, _ in leaves(params)]
    assert "layers[0].w_xr" in paths
    assert "layers[0].gate.w_xa" in paths
    assert "layers[1].w_xh" in paths
    assert not any(p.startswith("layers[1].gate") for p in paths)
    assert paths[-2:] == ["fc_w", "fc_b"]
    clone = clone_params(params)
    clone.layers[0].cell.b_r[:] = 7.0
    assert not np.array_equal(clone.layers[0].cell.b_r,
                              params.layers[0].cell.b_r)
    zeros = zero_grads(params)
    for (_, a), (_, z) in zip(leaves(params), leaves(zeros)):
        assert a.shape == z.shape
        assert not z.any()


def test_trace_contents(backend):
    spec = NetworkSpec(layers=(LayerSpec("gru", "softmax_element", 3, 4),
                               LayerSpec("gru", "none", 4, 4),
                               LayerSpec("gru", "hidden_element", 4, 6)),
                       fc_out=5)
    params, rng = _randomized_net(spec, seed=3)
    x = rng.normal(size=(2, 7, 3))
    _, _, trace = forward_network(spec, params, x, backend=backend)
    assert trace.layers() == [0, 2]
    assert trace.response(0).shape == (2, 7, 3)
    assert trace.response(2).shape == (2, 7, 6)
    assert trace.input(0).shape == (2, 7, 3)
    assert trace.meta[0]["mode"] == "softmax_element"
    # softmax responses sum to one at every timestep
    sums = trace.response(0).sum(axis=2)
    np.testing.assert_allclose(sums, np.ones((2, 7)), rtol=0, atol=1e-9)
    # sigmoid responses lie strictly inside (0, 1)
    r2 = trace.response(2)
    assert np.all((r2 > 0) & (r2 < 1))


def test_dropout_needs_rng_and_preserves_expectation(backend):
    spec = _small_spec(d=2, n=3, k=4, dropout=0.5)
    params, rng = _randomized_net(spec, seed=4)
    x = rng.normal(size=(1, 2, 2))
    with pytest.raises(ConfigError):
        forward_network(spec, params, x, train_mode=True, backend=backend)
    # inverted dropout: the average of many masked forwards matches the
    # eval-mode forward because the mask is unbiased and enters linearly
    ref, _, _ = forward_network(spec, params, x, backend=backend)
    drop_rng = stream(5, "dropout")
    acc = np.zeros_like(ref)
    m = 10_000
    for _ in range(m):
        logits, _, _ = forward_network(spec, params, x, train_mode=True,
                                       rng=drop_rng, backend=backend)
        acc += logits
    acc /= m
    np.testing.assert_allclose(acc, ref, rtol=0.01, atol=0.01)


def test_dropout_off_in_eval_mode(backend):
    spec = _small_spec(dropout=0.5)
    params, rng = _randomized_net(spec, seed=6)
    x = rng.normal(size=(3, 2, 3))
    a, _, _ = forward_network(spec, params, x, backend=backend)
    b, _, _ = forward_network(spec, params, x, backend=backend)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind,mode", [("gru", "element"),
                                       ("lstm", "hidden_element"),
                                       ("srnn", "softmax_element"),
                                       ("gru", "scalar"),
                                       ("lstm", "none")])
def test_grad_check_spot(backend, kind, mode):
    spec = _small_spec(kind=kind, mode=mode, layers=2, d=3, n=4, k=5, seed=11)
    params, rng = _randomized_net(spec, seed=11)
    x = rng.normal(size=(3, 4, 3))
    y = rng.integers(0, 5, size=3)
    report = grad_check(spec, params, x, y, backend=backend)
    assert report.passed, (report.max_rel_err, report.worst_param_path)
    assert report.max_rel_err <= 1e-5
    assert report.n_params == sum(a.size for _, a in leaves(params))


def test_grad_check_rejects_dropout(backend):
    spec = _small_spec(dropout=0.3)
    params, rng = _randomized_net(spec)
    with pytest.raises(ConfigError):
        grad_check(spec, params, rng.normal(size=(2, 2, 3)),
                   np.zeros(2, dtype=np.int64), backend=backend)


def test_grad_check_flags_wrong_gradient(backend):
    # sabotage one weight after the analytic pass would see it: simplest is
    # to check a detectably wrong eps-free path — corrupt params between
    # passes is impossible through the public call, so instead verify the
    # report is honest for a tiny eps that starves precision
    spec = _small_spec(seed=12)
    params, rng = _randomized_net(spec, seed=12)
    x = rng.normal(size=(2, 3, 3))
    y = rng.integers(0, 5, size=2)
    report = grad_check(spec, params, x, y, eps=1e-13, backend=backend)
    # with eps this small even extended precision truncates: must not pass
    assert report.max_rel_err > 1e-5 and not report.passed


def test_finite_diff_grad_matches_backward(backend):
    spec = _small_spec(kind="srnn", mode="element", seed=13)
    params, rng = _randomized_net(spec, seed=13)
    x = rng.normal(size=(2, 3, 3))
    y = rng.integers(0, 5, size=2)
    _, caches, _ = forward_network(spec, params, x, train_mode=True,
                                   backend=backend)
    _, grads = backward_network(spec, params, caches, y, backend=backend)
    num = finite_diff_grad(spec, params, x, y, eps=1e-6, dtype=np.longdouble)
    for (path, a), (_, n) in zip(leaves(grads), leaves(num)):
        np.testing.assert_allclose(a, n, rtol=0, atol=1e-7, err_msg=path)


def test_network_roundtrip(backend):
    spec = NetworkSpec(layers=(LayerSpec("lstm", "element", 3, 4),
                               LayerSpec("gru", "none", 4, 6)), fc_out=5,
                       seed=14)
    params, rng = _randomized_net(spec, seed=14)
    x = rng.normal(size=(4, 2, 3))
    before, _, _ = forward_network(spec, params, x, backend=backend)
    buf = io.BytesIO()
    save_network(buf, spec, params)
    buf.seek(0)
    spec2, params2 = load_network(buf)
    assert spec2.fc_out == 5
    assert [(ls.kind, ls.mode, ls.input_dim, ls.hidden_dim)
            for ls in spec2.layers] == \
           [(ls.kind, ls.mode, ls.input_dim, ls.hidden_dim)
            for ls in spec.layers]
    assert all(ls.dropout_p == 0.0 for ls in spec2.layers)
    after, _, _ = forward_network(spec2, params2, x, backend=backend)
    np.testing.assert_array_equal(before, after)


def _network_bytes():
    spec = _small_spec(seed=15)
    params, _ = _randomized_net(spec, seed=15)
    buf = io.BytesIO()
    save_network(buf, spec, params)
    return bytearray(buf.getvalue())


def test_load_network_corruption(tmp_path):
    cases = [
        ("magic", lambda b: b.__setitem__(slice(0, 4), b"XXXX")),
        ("version", lambda b: b.__setitem__(slice(4, 8),
                                            (9).to_bytes(4, "little"))),
        ("trailing", lambda b: b.extend(b"\x00")),
        ("truncated", lambda b: b.__delitem__(slice(len(b) - 3, len(b)))),
    ]
    for name, mutate in cases:
        raw = _network_bytes()
        mutate(raw)
        p = tmp_path / f"{name}.eanw"
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_network(p)
