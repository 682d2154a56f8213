"""Single-step cell semantics, gate algebra, and block serialization."""

import io

import numpy as np
import pytest

from eleatt.cells import (AttGateParams, CellKind, GateMode, GruParams,
                          LstmParams, SrnnParams, StepState, att_gate,
                          eleatt_step, gate_width, gru_step, init_cell,
                          init_gate, load_block, lstm_step, modulate,
                          save_block, srnn_step, zero_state)
from eleatt.errors import CheckpointError, ConfigError
from eleatt.rng import stream

D, N = 3, 4

KINDS = [CellKind.SRNN, CellKind.LSTM, CellKind.GRU]
GATED_MODES = [GateMode.ELEMENT, GateMode.SCALAR,
               GateMode.SOFTMAX_ELEMENT, GateMode.HIDDEN_ELEMENT]


def _rand_cell(kind, rng, d=D, n=N):
    return init_cell(kind, d, n, rng)


def _rand_state(kind, rng, n=N):
    c = rng.normal(size=n) if kind is CellKind.LSTM else None
    return StepState(h=rng.normal(size=n), c=c)


# scalar-loop oracles: independent elementwise evaluation of each recursion

def _sig(u):
    return 1.0 / (1.0 + np.exp(-u))


def _loop_affine(w_x, x, w_h, h, b):
    n = b.shape[0]
    out = np.zeros(n)
    for i in range(n):
        s = b[i]
        for j in range(x.shape[0]):
            s += w_x[i, j] * x[j]
        for j in range(h.shape[0]):
            s += w_h[i, j] * h[j]
        out[i] = s
    return out


def test_srnn_step_matches_loop_oracle():
    rng = stream(0, "test")
    p = _rand_cell(CellKind.SRNN, rng)
    x, st = rng.normal(size=D), _rand_state(CellKind.SRNN, rng)
    want = np.tanh(_loop_affine(p.w_xh, x, p.w_hh, st.h, p.b_h))
    got = srnn_step(p, x, st)
    np.testing.assert_allclose(got.h, want, rtol=0, atol=1e-13)
    assert got.c is None


def test_lstm_step_matches_loop_oracle():
    rng = stream(1, "test")
    p = _rand_cell(CellKind.LSTM, rng)
    x, st = rng.normal(size=D), _rand_state(CellKind.LSTM, rng)
    i = _sig(_loop_affine(p.w_xi, x, p.w_hi, st.h, p.b_i))
    f = _sig(_loop_affine(p.w_xf, x, p.w_hf, st.h, p.b_f))
    g = np.tanh(_loop_affine(p.w_xc, x, p.w_hc, st.h, p.b_c))
    o = _sig(_loop_affine(p.w_xo, x, p.w_ho, st.h, p.b_o))
    c = f * st.c + i * g
    want_h = o * np.tanh(c)
    got = lstm_step(p, x, st)
    np.testing.assert_allclose(got.c, c, rtol=0, atol=1e-13)
    np.testing.assert_allclose(got.h, want_h, rtol=0, atol=1e-13)


def test_gru_step_matches_loop_oracle():
    rng = stream(2, "test")
    p = _rand_cell(CellKind.GRU, rng)
    x, st = rng.normal(size=D), _rand_state(CellKind.GRU, rng)
    r = _sig(_loop_affine(p.w_xr, x, p.w_hr, st.h, p.b_r))
    z = _sig(_loop_affine(p.w_xz, x, p.w_hz, st.h, p.b_z))
    cand = np.tanh(_loop_affine(p.w_xh, x, p.w_hh, r * st.h, p.b_h))
    want = z * st.h + (1.0 - z) * cand
    got = gru_step(p, x, st)
    np.testing.assert_allclose(got.h, want, rtol=0, atol=1e-13)


def test_gru_update_gate_convention():
    # z -> 1 (saturated bias) must freeze the state: h_t == h_{t-1}
    rng = stream(3, "test")
    p = _rand_cell(CellKind.GRU, rng)
    p.b_z[:] = 1e6
    st = _rand_state(CellKind.GRU, rng)
    got = gru_step(p, rng.normal(size=D), st)
    np.testing.assert_array_equal(got.h, st.h)


def test_gru_saturated_reset_forgets_state():
    # r -> 0 and z -> 0: the new h depends only on x, not on the old state
    rng = stream(4, "test")
    p = _rand_cell(CellKind.GRU, rng)
    p.b_r[:] = -1e6
    p.b_z[:] = -1e6
    p.w_hr[:] = 0.0
    p.w_hz[:] = 0.0
    x = rng.normal(size=D)
    h1 = gru_step(p, x, _rand_state(CellKind.GRU, rng)).h
    h2 = gru_step(p, x, _rand_state(CellKind.GRU, rng)).h
    np.testing.assert_array_equal(h1, h2)


def test_lstm_carousel_preserves_cell_state():
    # i -> 0, f -> 1: c is carried unchanged through many steps
    rng = stream(5, "test")
    p = _rand_cell(CellKind.LSTM, rng)
    p.b_i[:] = -1e6
    p.b_f[:] = 1e6
    p.w_xi[:] = p.w_hi[:] = p.w_xf[:] = p.w_hf[:] = 0.0
    st = _rand_state(CellKind.LSTM, rng)
    c0 = st.c.copy()
    for _ in range(50):
        st = lstm_step(p, rng.normal(size=D), st)
    np.testing.assert_array_equal(st.c, c0)


def test_zero_state():
    st = zero_state(CellKind.GRU, 5)
    assert np.array_equal(st.h, np.zeros(5)) and st.c is None
    st = zero_state(CellKind.LSTM, 5)
    assert np.array_equal(st.c, np.zeros(5))


def test_gate_width_table():
    assert gate_width(GateMode.NONE, D, N) == 0
    assert gate_width(GateMode.SCALAR, D, N) == 1
    assert gate_width(GateMode.ELEMENT, D, N) == D
    assert gate_width(GateMode.SOFTMAX_ELEMENT, D, N) == D
    assert gate_width(GateMode.HIDDEN_ELEMENT, D, N) == N


def test_init_cell_glorot_bounds_and_zero_biases():
    rng = stream(6, "test")
    p = init_cell(CellKind.LSTM, 30, 20, rng)
    lim_xd = np.sqrt(6.0 / (20 + 30))
    lim_nn = np.sqrt(6.0 / (20 + 20))
    for name, arr in p.arrays():
        if name.startswith("b"):
            if name == "b_f":
                assert np.array_equal(arr, np.zeros(20))
            continue
        lim = lim_xd if arr.shape[1] == 30 else lim_nn
        assert np.abs(arr).max() <= lim
        # and actually spread out, not degenerate
        assert np.abs(arr).max() > 0.5 * lim


def test_init_cell_forget_bias():
    rng = stream(7, "test")
    p = init_cell(CellKind.LSTM, D, N, rng, forget_bias=1.0)
    assert np.array_equal(p.b_f, np.ones(N))
    assert np.array_equal(p.b_i, np.zeros(N))
    # other kinds ignore the knob
    q = init_cell(CellKind.GRU, D, N, rng, forget_bias=1.0)
    assert np.array_equal(q.b_z, np.zeros(N))


def test_init_cell_rejects_bad_dims():
    rng = stream(8, "test")
    with pytest.raises(ConfigError):
        init_cell(CellKind.GRU, 0, 4, rng)
    with pytest.raises(ConfigError):
        init_cell(CellKind.GRU, 4, 0, rng)


def test_init_gate_shapes():
    rng = stream(9, "test")
    assert init_gate(GateMode.NONE, D, N, rng) is None
    gp = init_gate(GateMode.HIDDEN_ELEMENT, D, N, rng)
    assert gp.w_xa.shape == (N, D)
    assert gp.w_ha.shape == (N, N)
    assert gp.b_a.shape == (N,)
    assert np.array_equal(gp.b_a, np.zeros(N))


def test_att_gate_softmax_sums_to_one():
    rng = stream(10, "test")
    gp = init_gate(GateMode.SOFTMAX_ELEMENT, D, N, rng)
    a = att_gate(gp, GateMode.SOFTMAX_ELEMENT, rng.normal(size=D),
                 rng.normal(size=N))
    assert abs(a.sum() - 1.0) <= 1e-12
    assert np.all(a > 0)


def test_att_gate_sigmoid_range():
    rng = stream(11, "test")
    gp = init_gate(GateMode.ELEMENT, D, N, rng)
    a = att_gate(gp, GateMode.ELEMENT, rng.normal(size=D), rng.normal(size=N))
    assert a.shape == (D,)
    assert np.all((a > 0) & (a < 1))


def test_modulate_semantics():
    rng = stream(12, "test")
    x, h = rng.normal(size=D), rng.normal(size=N)
    a = rng.uniform(0.1, 0.9, size=D)
    xm, hm = modulate(GateMode.ELEMENT, a, x, h)
    np.testing.assert_array_equal(xm, a * x)
    np.testing.assert_array_equal(hm, h)
    xm, hm = modulate(GateMode.SCALAR, np.array([0.25]), x, h)
    np.testing.assert_array_equal(xm, 0.25 * x)
    np.testing.assert_array_equal(hm, h)
    ah = rng.uniform(0.1, 0.9, size=N)
    xm, hm = modulate(GateMode.HIDDEN_ELEMENT, ah, x, h)
    np.testing.assert_array_equal(xm, x)
    np.testing.assert_array_equal(hm, ah * h)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", [GateMode.ELEMENT, GateMode.SCALAR,
                                  GateMode.HIDDEN_ELEMENT])
def test_saturated_gate_reduces_to_plain_cell(kind, mode):
    # zero gate weights + huge bias force a = 1 exactly, so the gated
    # trajectory must coincide with the ungated one
    rng = stream(13, "test")
    cell = _rand_cell(kind, rng)
    g = gate_width(mode, D, N)
    gate = AttGateParams(np.zeros((g, D)), np.zeros((g, N)), np.full(g, 1e6))
    st_gated = zero_state(kind, N)
    st_plain = zero_state(kind, N)
    for _ in range(100):
        x = rng.normal(size=D)
        st_gated, a = eleatt_step(kind, cell, gate, mode, x, st_gated)
        st_plain, _ = eleatt_step(kind, cell, None, GateMode.NONE, x, st_plain)
        assert np.array_equal(a, np.ones(g))
        np.testing.assert_allclose(st_gated.h, st_plain.h, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_scalar_gate_is_constant_row_element_gate(kind):
    # an element gate whose D rows all equal the scalar gate's single row
    # produces the identical trajectory
    rng = stream(14, "test")
    cell = _rand_cell(kind, rng)
    row_x = rng.normal(size=(1, D))
    row_h = rng.normal(size=(1, N))
    b = rng.normal(size=1)
    scalar_gate = AttGateParams(row_x, row_h, b)
    element_gate = AttGateParams(np.repeat(row_x, D, axis=0),
                                 np.repeat(row_h, D, axis=0),
                                 np.repeat(b, D))
    st_s, st_e = zero_state(kind, N), zero_state(kind, N)
    for _ in range(20):
        x = rng.normal(size=D)
        st_s, a_s = eleatt_step(kind, cell, scalar_gate, GateMode.SCALAR, x, st_s)
        st_e, a_e = eleatt_step(kind, cell, element_gate, GateMode.ELEMENT, x, st_e)
        assert a_s.shape == (1,) and a_e.shape == (D,)
        # same dot products via different matrix layouts: equal to roundoff
        np.testing.assert_allclose(st_s.h, st_e.h, rtol=0, atol=1e-12)


def test_eleatt_step_none_mode_returns_no_response():
    rng = stream(15, "test")
    cell = _rand_cell(CellKind.SRNN, rng)
    st, a = eleatt_step(CellKind.SRNN, cell, None, GateMode.NONE,
                        rng.normal(size=D), zero_state(CellKind.SRNN, N))
    assert a is None
    assert st.h.shape == (N,)


def test_hidden_gate_carries_unmodulated_state():
    # the stored state is the cell's own output; only in-step uses see a*h
    rng = stream(16, "test")
    cell = _rand_cell(CellKind.SRNN, rng)
    gate = init_gate(GateMode.HIDDEN_ELEMENT, D, N, rng)
    st = StepState(h=rng.normal(size=N))
    x = rng.normal(size=D)
    a = att_gate(gate, GateMode.HIDDEN_ELEMENT, x, st.h)
    want = srnn_step(cell, x, StepState(h=a * st.h)).h
    got, _ = eleatt_step(CellKind.SRNN, cell, gate, GateMode.HIDDEN_ELEMENT, x, st)
    np.testing.assert_allclose(got.h, want, rtol=0, atol=1e-13)


# --- block serialization ---------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("mode", [GateMode.NONE] + GATED_MODES)
def test_block_roundtrip(tmp_path, kind, mode):
    rng = stream(17, "test")
    cell = _rand_cell(kind, rng)
    gate = init_gate(mode, D, N, rng)
    path = tmp_path / "cell.earn"
    save_block(path, kind, mode, cell, gate)
    kind2, mode2, cell2, gate2 = load_block(path)
    assert kind2 is kind and mode2 is mode
    for (name, a), (name2, b) in zip(cell.arrays(), cell2.arrays()):
        assert name == name2
        np.testing.assert_array_equal(a, b)
    if mode is GateMode.NONE:
        assert gate2 is None
    else:
        for (_, a), (_, b) in zip(gate.arrays(), gate2.arrays()):
            np.testing.assert_array_equal(a, b)


def test_save_block_rejects_gate_mismatch(tmp_path):
    rng = stream(18, "test")
    cell = _rand_cell(CellKind.GRU, rng)
    gate = init_gate(GateMode.ELEMENT, D, N, rng)
    with pytest.raises(CheckpointError):
        save_block(tmp_path / "a.earn", CellKind.GRU, GateMode.NONE, cell, gate)
    with pytest.raises(CheckpointError):
        save_block(tmp_path / "b.earn", CellKind.GRU, GateMode.ELEMENT, cell, None)


def _block_bytes(kind=CellKind.GRU, mode=GateMode.ELEMENT):
    rng = stream(19, "test")
    buf = io.BytesIO()
    save_block(buf, kind, mode, _rand_cell(kind, rng),
               init_gate(mode, D, N, rng))
    return bytearray(buf.getvalue())


def test_load_block_bad_magic(tmp_path):
    raw = _block_bytes()
    raw[:4] = b"NOPE"
    p = tmp_path / "bad.earn"
    p.write_bytes(raw)
    with pytest.raises(CheckpointError, match="magic"):
        load_block(p)


def test_load_block_bad_version(tmp_path):
    raw = _block_bytes()
    raw[4:8] = (99).to_bytes(4, "little")
    p = tmp_path / "bad.earn"
    p.write_bytes(raw)
    with pytest.raises(CheckpointError, match="version"):
        load_block(p)


def test_load_block_unknown_codes(tmp_path):
    for offset, what in ((8, "kind"), (9, "mode")):
        raw = _block_bytes()
        raw[offset] = 200
        p = tmp_path / f"bad_{what}.earn"
        p.write_bytes(raw)
        with pytest.raises(CheckpointError, match=what):
            load_block(p)


def test_load_block_truncated(tmp_path):
    raw = _block_bytes()
    for cut, msg in ((10, "header"), (len(raw) - 5, "truncated")):
        p = tmp_path / "cut.earn"
        p.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match=msg):
            load_block(p)


def test_load_block_trailing_bytes(tmp_path):
    raw = _block_bytes() + b"\x00"
    p = tmp_path / "long.earn"
    p.write_bytes(raw)
    with pytest.raises(CheckpointError, match="trailing"):
        load_block(p)
