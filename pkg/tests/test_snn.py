import numpy as np
import pytest

from pdmkws import backends
from pdmkws.errors import ShapeError, StateError
from pdmkws.snn import (
    AxonalDelay,
    Conv1d,
    Dense,
    LeakyIntegrator,
    NeuronParams,
    ParaLIF,
    RecurrentParaLIF,
    conv_output_length,
    membrane_scan,
    membrane_sequential,
    relaxed_spike,
    surrogate_spike_grad,
)

BACKENDS = backends.backend_names()


class TestConvShapes:
    def test_layer1_length_at_alpha64(self):
        assert conv_output_length(1_024_000, 192, 96, 1) == 10_665

    def test_dilated_length(self):
        assert conv_output_length(10_665, 3, 3, 2) == 3_554

    def test_identity_kernel(self, rng):
        conv = Conv1d(1, 1, 1, rng=rng)
        conv.params["weight"][...] = 1.0
        conv.params["bias"][...] = 0.0
        x = rng.normal(size=(50, 1))
        np.testing.assert_allclose(conv.forward(x), x)

    def test_too_short_input_raises(self, rng):
        conv = Conv1d(1, 4, 8, rng=rng)
        with pytest.raises(ShapeError):
            conv.forward(rng.normal(size=(5, 1)))


class TestMembrane:
    def test_zero_input_zero_membrane(self):
        v = membrane_sequential(np.zeros((16, 3)), 0.9)
        assert not v.any()

    def test_constant_input_closed_form(self):
        v = membrane_sequential(np.full((3, 1), 2.0), 0.5)
        np.testing.assert_allclose(v[:, 0], [1.0, 1.5, 1.75])

    @pytest.mark.parametrize("beta", [0.1, 0.5, 0.95, 0.999])
    def test_scan_matches_sequential(self, beta, rng):
        cur = rng.normal(size=(64, 5))
        ref = membrane_sequential(cur, beta)
        np.testing.assert_allclose(membrane_scan(cur, beta), ref, rtol=1e-6, atol=1e-12)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_backend_kernels_agree_long(self, backend, rng):
        cur = rng.normal(size=(100_000, 2))
        ref = membrane_sequential(cur, 0.95)
        got = backends.kernels(backend).membrane_forward(cur, 0.95)
        err = np.abs(got - ref) / np.maximum(np.abs(ref), 1e-9)
        assert err.max() < 1e-6

    def test_backward_is_reversed_scan(self, rng):
        gv = rng.normal(size=(32, 2))
        beta = 0.8
        ref = membrane_sequential(gv[::-1], beta)[::-1]
        for backend in BACKENDS:
            got = backends.kernels(backend).membrane_backward(np.ascontiguousarray(gv), beta)
            np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-12)


class TestParaLIF:
    def test_silence(self):
        lif = ParaLIF(NeuronParams())
        s = lif.forward(np.zeros((20, 4)))
        assert not s.any()

    def test_constant_drive_spikes(self):
        lif = ParaLIF(NeuronParams(beta=0.5, theta=1.0))
        s = lif.forward(np.full((5, 1), 2.0))
        np.testing.assert_array_equal(s[:, 0], [1, 1, 1, 1, 1])
        np.testing.assert_allclose(lif.last_membrane[:3, 0], [1.0, 1.5, 1.75])

    def test_spike_binarity(self, rng):
        lif = ParaLIF(NeuronParams())
        s = lif.forward(rng.normal(size=(200, 8), scale=3.0))
        assert set(np.unique(s)).issubset({0.0, 1.0})

    def test_membrane_finite(self, rng):
        lif = ParaLIF(NeuronParams(beta=0.999))
        lif.forward(rng.normal(size=(5000, 4), scale=10.0))
        assert np.all(np.isfinite(lif.last_membrane))

    def test_backward_before_forward_raises(self):
        with pytest.raises(StateError):
            ParaLIF(NeuronParams()).backward(np.zeros((4, 1)))

    def test_li_equals_membrane_with_infinite_threshold(self, rng):
        cur = rng.normal(size=(64, 3))
        li = LeakyIntegrator(NeuronParams())
        lif = ParaLIF(NeuronParams(theta=1e30))
        v = li.forward(cur)
        assert not lif.forward(cur).any()
        np.testing.assert_allclose(lif.last_membrane, v)

    def test_li_impulse_decay(self):
        beta = 0.7
        li = LeakyIntegrator(NeuronParams(beta=beta))
        cur = np.zeros((10, 1))
        cur[0, 0] = 3.0
        v = li.forward(cur)
        expected = beta ** np.arange(10) * (1 - beta) * 3.0
        np.testing.assert_allclose(v[:, 0], expected)


class TestRecurrent:
    def test_zero_recurrence_reduces_to_feedforward(self, rng):
        cur = rng.normal(size=(40, 4))
        rec = RecurrentParaLIF(4, NeuronParams(), rng=rng)
        rec.params["rec_weight"][...] = 0.0
        rec.params["rec_bias"][...] = 0.0
        plain = ParaLIF(NeuronParams())
        np.testing.assert_allclose(rec.forward(cur), plain.forward(cur))
        np.testing.assert_allclose(rec.last_membrane, plain.last_membrane, rtol=1e-12)

    def test_negative_membrane_kills_recurrence(self, rng):
        cur = -np.abs(rng.normal(size=(30, 3))) - 1.0
        rec = RecurrentParaLIF(3, NeuronParams(), rng=rng)
        rec.params["rec_bias"][...] = 0.0
        plain = ParaLIF(NeuronParams())
        rec.forward(cur)
        plain.forward(cur)
        np.testing.assert_allclose(rec.last_membrane, plain.last_membrane, rtol=1e-12)

    def test_single_channel_hand_case(self, rng):
        rec = RecurrentParaLIF(1, NeuronParams(beta=0.5, theta=10.0), rng=rng)
        rec.params["rec_weight"][...] = 1.0
        rec.params["rec_bias"][...] = 0.0
        rec.forward(np.array([[2.0], [0.0]]))
        np.testing.assert_allclose(rec.last_membrane[:, 0], [1.0, 1.0])

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_backends_agree(self, backend, rng):
        cur = rng.normal(size=(50, 6))
        wr = rng.normal(size=(6, 6)) * 0.3
        br = rng.normal(size=6) * 0.1
        k = backends.kernels(backend)
        v = k.recurrent_forward(np.ascontiguousarray(cur), wr, br, 0.9)
        ref = backends.kernels("numpy").recurrent_forward(cur, wr, br, 0.9)
        np.testing.assert_allclose(v, ref, rtol=1e-10, atol=1e-12)


class TestDelay:
    def test_zero_delay_identity(self, rng):
        x = rng.normal(size=(30, 4))
        d = AxonalDelay(np.zeros(4, dtype=int))
        np.testing.assert_array_equal(d.forward(x), x)

    def test_single_spike_shift(self):
        x = np.zeros((12, 1))
        x[5, 0] = 1.0
        d = AxonalDelay(np.array([3]))
        y = d.forward(x)
        assert y[8, 0] == 1.0 and y.sum() == 1.0

    def test_counts_conserved_up_to_truncation(self, rng):
        x = (rng.random((100, 6)) < 0.2).astype(float)
        delays = np.array([0, 4, 8, 12, 20, 30])
        d = AxonalDelay(delays)
        y = d.forward(x)
        lost = sum(x[100 - delays[c] :, c].sum() for c in range(6))
        assert y.sum() == x.sum() - lost

    def test_range_validation(self):
        with pytest.raises(ValueError):
            AxonalDelay(np.array([31]))
        with pytest.raises(ValueError):
            AxonalDelay(np.array([-1]))

    def test_unsorted_delays_supported(self, rng):
        x = rng.normal(size=(40, 3))
        d = AxonalDelay(np.array([7, 2, 7]))
        y = d.forward(x)
        np.testing.assert_array_equal(y[7:, 0], x[:33, 0])
        np.testing.assert_array_equal(y[2:, 1], x[:38, 1])


class TestSurrogate:
    def test_peak_at_threshold(self):
        p = NeuronParams()
        assert surrogate_spike_grad(p.theta, p) == 1.0

    def test_quarter_at_inverse_slope(self):
        p = NeuronParams()
        assert surrogate_spike_grad(p.theta + 1 / p.surrogate_slope, p) == pytest.approx(0.25)

    def test_symmetry(self, rng):
        p = NeuronParams()
        a = rng.random(32)
        np.testing.assert_allclose(
            surrogate_spike_grad(p.theta + a, p), surrogate_spike_grad(p.theta - a, p)
        )

    def test_relaxed_spike_derivative_matches(self):
        p = NeuronParams()
        v = np.linspace(-2, 4, 601)
        h = 1e-7
        fd = (relaxed_spike(v + h, p) - relaxed_spike(v - h, p)) / (2 * h)
        np.testing.assert_allclose(fd, surrogate_spike_grad(v, p), rtol=1e-5, atol=1e-7)


# -- gradient checks ---------------------------------------------------------------


def _numeric_grad(loss_fn, param, coords, h=1e-6):
    out = {}
    for coord in coords:
        orig = param[coord]
        param[coord] = orig + h
        up = loss_fn()
        param[coord] = orig - h
        down = loss_fn()
        param[coord] = orig
        out[coord] = (up - down) / (2 * h)
    return out


def _sample_coords(shape, rng, k=10):
    size = int(np.prod(shape))
    picks = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(int(p), shape) for p in picks]


def _check_param_grads(layers, x, rng, rtol, proj):
    def run():
        out = x
        for layer in layers:
            out = layer.forward(out)
        return float((out * proj).sum())

    run()
    for layer in layers:
        layer.zero_grad()
    out = x
    for layer in layers:
        out = layer.forward(out)
    g = proj.copy()
    for layer in reversed(layers):
        g = layer.backward(g)
    for layer in layers:
        for name, param in layer.params.items():
            coords = _sample_coords(param.shape, rng, k=8)
            numeric = _numeric_grad(run, param, coords)
            for coord, fd in numeric.items():
                analytic = layer.grads[name][coord]
                denom = max(abs(fd), abs(analytic), 1e-4)
                assert abs(fd - analytic) / denom < rtol, (
                    f"{type(layer).__name__}.{name}{coord}: fd={fd} analytic={analytic}"
                )


class TestGradients:
    def test_linear_chain_matches_finite_differences(self, rng):
        # theta -> infinity removes all spiking; the model is smooth
        neuron = NeuronParams(beta=0.9, theta=1e30)
        layers = [
            Conv1d(2, 4, 3, stride=2, rng=rng),
            LeakyIntegrator(neuron),
            Dense(4, 3, rng=rng),
            LeakyIntegrator(neuron),
        ]
        x = rng.normal(size=(40, 2))
        proj = rng.normal(size=(19, 3))
        _check_param_grads(layers, x, rng, rtol=1e-6, proj=proj)

    def test_relaxed_spiking_chain_matches_finite_differences(self, rng):
        neuron = NeuronParams(beta=0.9, theta=1.0, surrogate_slope=10.0)
        mask = (rng.random((4, 4)) < 0.5).astype(float)
        layers = [
            Conv1d(2, 4, 3, stride=1, rng=rng),
            ParaLIF(neuron, spike_mode="relaxed"),
            AxonalDelay(rng.integers(0, 5, size=4)),
            Conv1d(4, 4, 3, stride=1, dilation=2, mask=mask, rng=rng),
            RecurrentParaLIF(4, neuron, spike_mode="relaxed", rng=rng),
            Dense(4, 3, rng=rng),
            LeakyIntegrator(neuron),
        ]
        x = rng.normal(size=(32, 2), scale=2.0)
        proj = rng.normal(size=(26, 3))
        _check_param_grads(layers, x, rng, rtol=1e-4, proj=proj)

    def test_input_gradient_matches_finite_differences(self, rng):
        neuron = NeuronParams(beta=0.8)
        layers = [
            Conv1d(1, 3, 4, stride=2, rng=rng),
            ParaLIF(neuron, spike_mode="relaxed"),
            Dense(3, 2, rng=rng),
            LeakyIntegrator(neuron),
        ]
        x = rng.normal(size=(24, 1))
        proj = rng.normal(size=(11, 2))

        def run():
            out = x
            for layer in layers:
                out = layer.forward(out)
            return float((out * proj).sum())

        run()
        for layer in layers:
            layer.zero_grad()
        out = x
        for layer in layers:
            out = layer.forward(out)
        g = proj.copy()
        for layer in reversed(layers):
            g = layer.backward(g)
        for coord in _sample_coords(x.shape, rng, k=6):
            fd = _numeric_grad(run, x, [coord])[coord]
            denom = max(abs(fd), abs(g[coord]), 1e-4)
            assert abs(fd - g[coord]) / denom < 1e-4

    def test_zero_upstream_gives_zero_grads(self, rng):
        layers = [Conv1d(2, 3, 3, rng=rng), ParaLIF(NeuronParams()), Dense(3, 2, rng=rng)]
        out = rng.normal(size=(20, 2))
        for layer in layers:
            out = layer.forward(out)
        g = np.zeros_like(out)
        for layer in reversed(layers):
            g = layer.backward(g)
        for layer in layers:
            for grad in layer.grads.values():
                assert not grad.any()

    def test_masked_weights_frozen(self, rng):
        mask = np.ones((3, 2))
        mask[1, 0] = 0
        conv = Conv1d(2, 3, 3, mask=mask, rng=rng)
        x = rng.normal(size=(20, 2))
        y0 = conv.forward(x)
        conv.zero_grad()
        conv.backward(np.ones_like(y0))
        g0 = conv.grads["weight"].copy()
        # flipping the stored masked value changes nothing
        conv.params["weight"][1, 0, :] = 5.0
        y1 = conv.forward(x)
        conv.zero_grad()
        conv.backward(np.ones_like(y1))
        np.testing.assert_array_equal(y0, y1)
        np.testing.assert_array_equal(g0, conv.grads["weight"])
        assert not conv.grads["weight"][1, 0].any()
