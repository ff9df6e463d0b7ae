import numpy as np
import pytest

from tempadv.errors import ConfigError, InputError, UsageError
from tempadv.cells import (
    CellState,
    GruParams,
    LstmParams,
    OrnnParams,
    init_cell,
    step,
    td_gru_step,
    td_lstm_step,
    td_ornn_step,
    unroll,
    zero_state,
)
from tempadv.nn import Tape, Tensor, finite_difference_check, reduce_mean, softmax_cross_entropy_rows


def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


# Plain (undilated) reference steps, written directly against the standard
# formulas with no shared code path through the package's tape ops.

def ref_ornn(x, h, p):
    return np.tanh(x @ p.w_xh.data.T + h @ p.w_hh.data.T + p.bias.data)


def ref_lstm(x, h, cc, p):
    f = _sig(x @ p.w_xf.data.T + h @ p.w_hf.data.T + p.b_f.data)
    i = _sig(x @ p.w_xi.data.T + h @ p.w_hi.data.T + p.b_i.data)
    c = np.tanh(x @ p.w_xc.data.T + h @ p.w_hc.data.T + p.b_c.data)
    cc2 = f * cc + i * c
    o = _sig(x @ p.w_xo.data.T + h @ p.w_ho.data.T + p.b_o.data)
    return o * np.tanh(cc2), cc2


def ref_gru(x, h, p):
    r = _sig(x @ p.w_xr.data.T + h @ p.w_hr.data.T + p.b_r.data)
    z = _sig(x @ p.w_xz.data.T + h @ p.w_hz.data.T + p.b_z.data)
    cand = np.tanh(x @ p.w_xh.data.T + (r * h) @ p.w_hh.data.T + p.b_h.data)
    return z * cand + (1.0 - z) * h


def _random_state(rng, kind, batch, hidden):
    st = zero_state(kind, batch, hidden)
    st.h.data[:] = rng.normal(size=(batch, hidden))
    if st.cc is not None:
        st.cc.data[:] = rng.normal(size=(batch, hidden))
    return st


class TestDilationOneEquivalence:
    @pytest.mark.parametrize("kind", ["ornn", "lstm", "gru"])
    def test_100_random_triples(self, kind):
        rng = np.random.default_rng(42)
        for _ in range(100):
            d_in = int(rng.integers(1, 7))
            d_h = int(rng.integers(1, 7))
            p = init_cell(kind, rng, d_in, d_h, dilation=1.0)
            for t in p.parameters():
                t.data[:] = rng.normal(size=t.data.shape)
            x = Tensor(rng.normal(size=(2, d_in)))
            st = _random_state(rng, kind, 2, d_h)
            out = step(kind, x, st, p)
            if kind == "ornn":
                want = ref_ornn(x.data, st.h.data, p)
            elif kind == "lstm":
                want, _ = ref_lstm(x.data, st.h.data, st.cc.data, p)
            else:
                want = ref_gru(x.data, st.h.data, p)
            np.testing.assert_allclose(out.h.data, want, rtol=0, atol=1e-12)


class TestOrnnStep:
    def test_zero_prev_state_ignores_recurrence(self):
        rng = np.random.default_rng(0)
        p1 = init_cell("ornn", np.random.default_rng(1), 3, 4, dilation=1.0)
        p2 = OrnnParams(p1.w_xh, Tensor(rng.normal(size=(4, 4))), p1.bias, dilation=5.0)
        x = Tensor(rng.normal(size=(1, 3)))
        a = td_ornn_step(x, zero_state("ornn", 1, 4), p1)
        b = td_ornn_step(x, zero_state("ornn", 1, 4), p2)
        np.testing.assert_array_equal(a.h.data, b.h.data)

    def test_scalar_hand_value(self):
        # tanh(0.2*1 + 2*0.4*0.5) = tanh(0.6)
        p = OrnnParams(Tensor([[0.2]]), Tensor([[0.4]]), Tensor([0.0]), dilation=2.0)
        st = CellState(h=Tensor([[0.5]]))
        out = td_ornn_step(Tensor([[1.0]]), st, p)
        np.testing.assert_allclose(out.h.data, [[0.5370495669980352]], atol=1e-12)

    def test_dimension_mismatch(self):
        p = init_cell("ornn", np.random.default_rng(0), 3, 4)
        with pytest.raises(ConfigError):
            td_ornn_step(Tensor(np.zeros((1, 5))), zero_state("ornn", 1, 4), p)

    def test_monotone_recurrent_preactivation(self):
        # growing dilation strictly grows |dilation*W_hh*h| per component
        rng = np.random.default_rng(9)
        w_hh = rng.normal(size=(4, 4))
        h = rng.normal(size=4)
        base = np.abs(w_hh @ h)
        assert (base > 0).all()
        prev = base
        for hn in (1.5, 2.0, 4.0):
            cur = np.abs((w_hh * hn) @ h)
            assert (cur > prev).all()
            prev = cur


class TestLstmStep:
    def test_zero_weights(self):
        p = init_cell("lstm", np.random.default_rng(0), 2, 3, dilation=2.0)
        for t in p.parameters():
            t.data[:] = 0.0
        out = td_lstm_step(Tensor(np.ones((1, 2))), zero_state("lstm", 1, 3), p)
        np.testing.assert_array_equal(out.h.data, np.zeros((1, 3)))
        np.testing.assert_array_equal(out.cc.data, np.zeros((1, 3)))

    def test_scalar_hand_value(self):
        # only w_xc nonzero (0.3, dilated by 2): c=tanh(0.6), f=i=o=0.5,
        # cc=0.5*tanh(0.6), h=0.5*tanh(cc)
        p = init_cell("lstm", np.random.default_rng(0), 1, 1, dilation=2.0)
        for t in p.parameters():
            t.data[:] = 0.0
        p.w_xc.data[:] = 0.3
        out = td_lstm_step(Tensor([[1.0]]), zero_state("lstm", 1, 1), p)
        np.testing.assert_allclose(out.cc.data, [[0.2685247834990176]], atol=1e-12)
        np.testing.assert_allclose(out.h.data, [[0.13112580529550327]], atol=1e-12)

    def test_missing_cell_buffer(self):
        p = init_cell("lstm", np.random.default_rng(0), 2, 3)
        with pytest.raises(UsageError):
            td_lstm_step(Tensor(np.zeros((1, 2))), CellState(h=Tensor(np.zeros((1, 3)))), p)

    def test_input_dilation_asymmetry(self):
        # dilation touches w_xc/w_xo but not w_xf/w_xi
        rng = np.random.default_rng(4)
        p = init_cell("lstm", rng, 2, 3, dilation=3.0)
        x = Tensor(rng.normal(size=(1, 2)))
        st = _random_state(np.random.default_rng(5), "lstm", 1, 3)
        hn = 3.0
        f = _sig(x.data @ p.w_xf.data.T + st.h.data @ (p.w_hf.data * hn).T)
        i = _sig(x.data @ p.w_xi.data.T + st.h.data @ (p.w_hi.data * hn).T)
        c = np.tanh(x.data @ (p.w_xc.data * hn).T + st.h.data @ (p.w_hc.data * hn).T)
        cc = f * st.cc.data + i * c
        o = _sig(x.data @ (p.w_xo.data * hn).T + st.h.data @ (p.w_ho.data * hn).T)
        out = td_lstm_step(x, st, p)
        np.testing.assert_allclose(out.h.data, o * np.tanh(cc), atol=1e-12)

    def test_dilate_input_weights_off(self):
        rng = np.random.default_rng(6)
        p = init_cell("lstm", rng, 2, 3, dilation=3.0, dilate_input_weights=False)
        x = Tensor(rng.normal(size=(1, 2)))
        st = _random_state(np.random.default_rng(7), "lstm", 1, 3)
        hn = 3.0
        f = _sig(x.data @ p.w_xf.data.T + st.h.data @ (p.w_hf.data * hn).T)
        i = _sig(x.data @ p.w_xi.data.T + st.h.data @ (p.w_hi.data * hn).T)
        c = np.tanh(x.data @ p.w_xc.data.T + st.h.data @ (p.w_hc.data * hn).T)
        cc = f * st.cc.data + i * c
        o = _sig(x.data @ p.w_xo.data.T + st.h.data @ (p.w_ho.data * hn).T)
        out = td_lstm_step(x, st, p)
        np.testing.assert_allclose(out.h.data, o * np.tanh(cc), atol=1e-12)


class TestGruStep:
    def test_scalar_hand_value(self):
        # only w_xh nonzero (0.25, dilated by 2): R=Z=0.5, cand=tanh(0.5),
        # h = 0.5*tanh(0.5)
        p = init_cell("gru", np.random.default_rng(0), 1, 1, dilation=2.0)
        for t in p.parameters():
            t.data[:] = 0.0
        p.w_xh.data[:] = 0.25
        out = td_gru_step(Tensor([[1.0]]), zero_state("gru", 1, 1), p)
        np.testing.assert_allclose(out.h.data, [[0.23105857863000487]], atol=1e-12)

    def test_update_gate_zero_carries_state(self):
        # huge negative update-gate bias forces Z ~ 0 -> h ~ h_prev
        rng = np.random.default_rng(8)
        p = init_cell("gru", rng, 2, 3, dilation=1.5)
        p.b_z.data[:] = -60.0
        st = _random_state(np.random.default_rng(9), "gru", 1, 3)
        out = td_gru_step(Tensor(rng.normal(size=(1, 2))), st, p)
        np.testing.assert_allclose(out.h.data, st.h.data, atol=1e-12)

    def test_candidate_input_dilation(self):
        rng = np.random.default_rng(10)
        p = init_cell("gru", rng, 2, 3, dilation=2.5)
        x = Tensor(rng.normal(size=(1, 2)))
        st = _random_state(np.random.default_rng(11), "gru", 1, 3)
        hn = 2.5
        r = _sig(x.data @ p.w_xr.data.T + st.h.data @ (p.w_hr.data * hn).T)
        z = _sig(x.data @ p.w_xz.data.T + st.h.data @ (p.w_hz.data * hn).T)
        cand = np.tanh(x.data @ (p.w_xh.data * hn).T + (r * st.h.data) @ (p.w_hh.data * hn).T)
        want = z * cand + (1 - z) * st.h.data
        out = td_gru_step(x, st, p)
        np.testing.assert_allclose(out.h.data, want, atol=1e-12)


class TestGateRanges:
    @pytest.mark.parametrize("kind", ["lstm", "gru"])
    def test_hidden_in_open_interval(self, kind):
        rng = np.random.default_rng(12)
        for _ in range(20):
            p = init_cell(kind, rng, 4, 5, dilation=float(rng.uniform(0.5, 4)))
            for t in p.parameters():
                t.data[:] = rng.normal(scale=2.0, size=t.data.shape)
            st = _random_state(rng, kind, 3, 5)
            out = step(kind, Tensor(rng.normal(size=(3, 4))), st, p)
            assert np.all(np.isfinite(out.h.data))
            if kind == "gru":
                # convex blend of tanh candidate and previous state
                bound = np.maximum(np.abs(st.h.data), 1.0) + 1e-12
                assert np.all(np.abs(out.h.data) <= bound)


class TestUnroll:
    def test_single_step_window(self):
        rng = np.random.default_rng(13)
        p = init_cell("gru", rng, 3, 4)
        x = Tensor(rng.uniform(size=(2, 3)))
        states = unroll("gru", p, [x])
        direct = td_gru_step(x, zero_state("gru", 2, 4), p)
        np.testing.assert_array_equal(states[0].h.data, direct.h.data)
        assert len(states) == 1

    def test_empty_sequence(self):
        p = init_cell("ornn", np.random.default_rng(0), 3, 4)
        with pytest.raises(InputError):
            unroll("ornn", p, [])

    def test_contraction_converges_to_fixed_point(self):
        # scalar ORNN with |w| < 1 and constant input: iterate the map
        # numerically to its fixed point, then check monotone approach
        p = OrnnParams(Tensor([[0.3]]), Tensor([[0.5]]), Tensor([0.0]), dilation=1.0)
        xval = 0.8
        fp = 0.0
        for _ in range(10000):
            fp = np.tanh(0.3 * xval + 0.5 * fp)
        xs = [Tensor([[xval]]) for _ in range(30)]
        states = unroll("ornn", p, xs)
        dists = [abs(float(s.h.data[0, 0]) - fp) for s in states]
        assert dists[-1] < 1e-9
        assert all(dists[i + 1] <= dists[i] + 1e-15 for i in range(len(dists) - 1))

    def test_input_order_sensitivity(self):
        rng = np.random.default_rng(14)
        p = init_cell("ornn", rng, 3, 4)
        assert np.abs(p.w_hh.data).max() > 0
        seq = [Tensor(rng.uniform(size=(1, 3))) for _ in range(4)]
        swapped = [seq[1], seq[0]] + seq[2:]
        a = unroll("ornn", p, seq)
        b = unroll("ornn", p, swapped)
        assert not np.allclose(a[1].h.data, b[1].h.data)
        assert not np.allclose(a[3].h.data, b[3].h.data)


class TestBptt:
    @pytest.mark.parametrize("kind", ["ornn", "lstm", "gru"])
    def test_finite_difference_through_8_steps(self, kind):
        rng = np.random.default_rng(21)
        d_in, d_h, classes, time_n = 5, 6, 3, 8
        p = init_cell(kind, rng, d_in, d_h, dilation=1.7)
        head_w = Tensor(rng.normal(scale=0.4, size=(classes, d_h)))
        xs = [Tensor(rng.uniform(size=(2, d_in))) for _ in range(time_n)]
        labels = rng.integers(0, classes, size=2)

        from tempadv.nn import add, linear

        def loss_fn():
            states = unroll(kind, p, xs)
            total = None
            for st in states:
                ce = softmax_cross_entropy_rows(linear(st.h, head_w), labels)
                total = ce if total is None else add(total, ce)
            return reduce_mean(total)

        params = p.parameters() + [head_w]
        err = finite_difference_check(loss_fn, params, probe_count=30, rng=rng)
        assert err < 1e-4
