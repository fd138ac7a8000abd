"""Spiking network primitives.

Time-major (T, C) float64 arrays throughout. Each layer implements an
explicit forward/backward pair; backward accumulates parameter gradients on
the layer and returns the gradient w.r.t. its input. The leaky membrane
V[t] = beta*V[t-1] + (1-beta)*I[t] is a linear recurrence: the numba backend
evaluates it sequentially, the numpy backend by a log-offset prefix scan, and
both are exposed directly for agreement tests.

Spiking layers support two spike functions sharing one backward pass:
``hard`` (Heaviside at threshold, the training/inference forward) and
``relaxed`` (a smooth step whose derivative equals the fast-sigmoid surrogate
exactly, which makes finite-difference gradient checks meaningful).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from ._kernels_numpy import membrane_forward as _scan_membrane
from .errors import ShapeError, StateError


@dataclass(frozen=True)
class NeuronParams:
    """Membrane decay, spiking threshold and surrogate slope."""

    beta: float = 0.95
    theta: float = 1.0
    surrogate_slope: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if self.theta <= 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.surrogate_slope <= 0.0:
            raise ValueError(f"surrogate slope must be positive, got {self.surrogate_slope}")


@dataclass(frozen=True)
class SpikeTensor:
    """Binary time-by-channel spike raster at a layer's step rate."""

    values: np.ndarray
    step_rate_hz: float

    @property
    def total_spikes(self) -> int:
        return int(self.values.sum())


@dataclass(frozen=True)
class MembraneTrace:
    """Real-valued time-by-channel membrane potentials."""

    values: np.ndarray


def surrogate_spike_grad(v, params: NeuronParams):
    """Fast-sigmoid surrogate derivative, peaking at 1 when v == theta."""
    w = np.array(v, dtype=np.float64)
    w -= params.theta
    np.abs(w, out=w)
    w *= params.surrogate_slope
    w += 1.0
    w *= w
    np.reciprocal(w, out=w)
    return w


def relaxed_spike(v, params: NeuronParams):
    """Smooth step whose derivative is exactly surrogate_spike_grad."""
    w = np.asarray(v, dtype=np.float64) - params.theta
    return 0.5 + w / (1.0 + params.surrogate_slope * np.abs(w))


def membrane_sequential(current: np.ndarray, beta: float) -> np.ndarray:
    """Step-by-step reference evaluation of the membrane recurrence."""
    cur = np.asarray(current, dtype=np.float64)
    v = np.empty_like(cur)
    prev = np.zeros(cur.shape[1])
    one_m = 1.0 - beta
    for t in range(cur.shape[0]):
        prev = beta * prev + one_m * cur[t]
        v[t] = prev
    return v


def membrane_scan(current: np.ndarray, beta: float) -> np.ndarray:
    """Prefix-scan evaluation of the membrane recurrence (vectorized over time)."""
    return _scan_membrane(np.asarray(current, dtype=np.float64), beta)


def conv_output_length(length: int, kernel_size: int, stride: int, dilation: int) -> int:
    span = dilation * (kernel_size - 1) + 1
    if length < span:
        raise ShapeError(
            f"input length {length} shorter than receptive field {span} "
            f"(kernel {kernel_size}, dilation {dilation})"
        )
    return (length - span) // stride + 1


class Layer:
    """Forward/backward pair with named parameters and accumulated gradients."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> np.ndarray:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_ctx(self, name: str = "_ctx"):
        ctx = getattr(self, name, None)
        if ctx is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return ctx


class Conv1d(Layer):
    """1D cross-correlation over (T, Cin) input with stride and dilation.

    An optional (Cout, Cin) binary mask zeroes whole input-channel
    connections; masked weights act as exact zeros in the forward pass and
    receive exactly zero gradient.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        dilation: int = 1,
        mask: np.ndarray | None = None,
        rng: np.random.Generator | None = None,
        bias_init: float = 0.0,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        if self.mask is not None and self.mask.shape != (out_channels, in_channels):
            raise ValueError(f"mask shape {self.mask.shape} != ({out_channels}, {in_channels})")
        rng = rng or np.random.default_rng()
        fan_in = kernel_size * (
            in_channels if self.mask is None else int(round(self.mask[0].sum()))
        )
        bound = np.sqrt(1.0 / fan_in)
        weight = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size))
        if self.mask is not None:
            weight *= self.mask[:, :, None]
        self._register("weight", weight)
        self._register("bias", np.full(out_channels, float(bias_init)))
        self._ctx = None
        self._idx_cache: np.ndarray | None = None

    def effective_weight(self) -> np.ndarray:
        w = self.params["weight"]
        return w if self.mask is None else w * self.mask[:, :, None]

    def trainable_count(self) -> int:
        n_w = self.params["weight"].size
        if self.mask is not None:
            n_w = int(self.mask.sum()) * self.kernel_size
        return n_w + self.params["bias"].size

    def _window_index(self, l_out: int) -> np.ndarray:
        cached = self._idx_cache
        if cached is None or cached.shape[0] != l_out:
            cached = (
                np.arange(l_out)[:, None] * self.stride
                + np.arange(self.kernel_size)[None, :] * self.dilation
            )
            self._idx_cache = cached
        return cached

    def forward(self, x: np.ndarray) -> np.ndarray:
        length = x.shape[0]
        l_out = conv_output_length(length, self.kernel_size, self.stride, self.dilation)
        windows = x[self._window_index(l_out)]  # (Lout, K, Cin)
        w = self.effective_weight()
        flat_w = w.transpose(2, 1, 0).reshape(self.kernel_size * self.in_channels, -1)
        y = windows.reshape(l_out, -1) @ flat_w + self.params["bias"]
        self._ctx = (windows, length)
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        windows, length = self._take_ctx()
        l_out = gy.shape[0]
        gw = (gy.T @ windows.reshape(l_out, -1)).reshape(
            self.out_channels, self.kernel_size, self.in_channels
        ).transpose(0, 2, 1)
        if self.mask is not None:
            gw *= self.mask[:, :, None]
        self.grads["weight"] += gw
        self.grads["bias"] += gy.sum(axis=0)
        w = self.effective_weight()
        # one GEMM for all taps, then scatter-add back onto the input grid
        flat_w = w.transpose(0, 2, 1).reshape(self.out_channels, -1)
        contrib = np.ascontiguousarray(gy @ flat_w)  # (Lout, K*Cin)
        gx = np.zeros((length, self.in_channels))
        backends.kernels().conv_scatter_add(
            contrib, gx, self.stride, self.dilation, self.kernel_size
        )
        return gx


class ParaLIF(Layer):
    """Parallelizable leaky integrate-and-fire neuron, deterministic threshold.

    The membrane accumulates without reset (a pure linear recurrence); spikes
    are emitted wherever it reaches the threshold. Backward routes gradients
    through the surrogate at the stored membrane values and then through the
    reversed linear recurrence.
    """

    def __init__(
        self,
        neuron: NeuronParams,
        spike_mode: str = "hard",
        backend: str | None = None,
    ):
        super().__init__()
        if spike_mode not in ("hard", "relaxed"):
            raise ValueError(f"unknown spike mode {spike_mode!r}")
        self.neuron = neuron
        self.spike_mode = spike_mode
        self._backend = backend
        self._ctx = None

    def _membrane(self, x: np.ndarray) -> np.ndarray:
        k = backends.kernels(self._backend)
        return k.membrane_forward(np.ascontiguousarray(x, dtype=np.float64), self.neuron.beta)

    def spike(self, v: np.ndarray) -> np.ndarray:
        if self.spike_mode == "hard":
            return (v >= self.neuron.theta).astype(np.float64)
        return relaxed_spike(v, self.neuron)

    def forward(self, x: np.ndarray) -> np.ndarray:
        v = self._membrane(x)
        self._ctx = v
        return self.spike(v)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        v = self._take_ctx()
        gv = gy * surrogate_spike_grad(v, self.neuron)
        k = backends.kernels(self._backend)
        return k.membrane_backward(np.ascontiguousarray(gv), self.neuron.beta)

    @property
    def last_membrane(self) -> np.ndarray:
        return self._take_ctx()


class RecurrentParaLIF(ParaLIF):
    """ParaLIF with channel recurrence driven by ReLU of the previous membrane.

    The recurrence breaks the linear scan, so the forward pass runs
    sequentially over time; backward is a full (untruncated) unroll.
    """

    def __init__(
        self,
        channels: int,
        neuron: NeuronParams,
        spike_mode: str = "hard",
        rng: np.random.Generator | None = None,
        backend: str | None = None,
    ):
        super().__init__(neuron, spike_mode, backend)
        rng = rng or np.random.default_rng()
        bound = np.sqrt(1.0 / channels)
        self._register("rec_weight", rng.uniform(-bound, bound, size=(channels, channels)))
        self._register("rec_bias", np.zeros(channels))

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = backends.kernels(self._backend)
        v = k.recurrent_forward(
            np.ascontiguousarray(x, dtype=np.float64),
            self.params["rec_weight"],
            self.params["rec_bias"],
            self.neuron.beta,
        )
        self._ctx = v
        return self.spike(v)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        v = self._take_ctx()
        gv_direct = np.ascontiguousarray(gy * surrogate_spike_grad(v, self.neuron))
        k = backends.kernels(self._backend)
        gx, gwr, gbr = k.recurrent_backward(
            v, gv_direct, self.params["rec_weight"], self.neuron.beta
        )
        self.grads["rec_weight"] += gwr
        self.grads["rec_bias"] += gbr
        return gx


class LeakyIntegrator(Layer):
    """Non-spiking membrane used as the readout integrator."""

    def __init__(self, neuron: NeuronParams, backend: str | None = None):
        super().__init__()
        self.neuron = neuron
        self._backend = backend
        self._ran = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = backends.kernels(self._backend)
        self._ran = True
        return k.membrane_forward(np.ascontiguousarray(x, dtype=np.float64), self.neuron.beta)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        self._take_ctx("_ran")
        k = backends.kernels(self._backend)
        return k.membrane_backward(np.ascontiguousarray(gy, dtype=np.float64), self.neuron.beta)


class AxonalDelay(Layer):
    """Fixed per-channel time shift; length preserved, head zero-filled."""

    def __init__(self, delays: np.ndarray):
        super().__init__()
        delays = np.asarray(delays, dtype=np.int64)
        if delays.size and (delays.min() < 0 or delays.max() > 30):
            raise ValueError("delays must lie in [0, 30]")
        self.delays = delays
        self.identity = bool(delays.size == 0 or delays.max() == 0)
        # channels sharing a delay value, as contiguous column ranges when the
        # vector is sorted (block copies), otherwise as index arrays
        self._groups: list[tuple[int, object]] = []
        if not self.identity:
            sorted_delays = bool(np.all(np.diff(delays) >= 0))
            for d in np.unique(delays):
                cols = np.flatnonzero(delays == d)
                key = slice(int(cols[0]), int(cols[-1]) + 1) if sorted_delays else cols
                self._groups.append((int(d), key))
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        t_len = x.shape[0]
        self._ctx = t_len
        if self.identity:
            return x.copy()
        y = np.zeros_like(x)
        for d, cols in self._groups:
            if d == 0:
                y[:, cols] = x[:, cols]
            elif d < t_len:
                y[d:, cols] = x[: t_len - d, cols]
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        t_len = self._take_ctx()
        if self.identity:
            return gy.copy()
        gx = np.zeros_like(gy)
        for d, cols in self._groups:
            if d == 0:
                gx[:, cols] = gy[:, cols]
            elif d < t_len:
                gx[: t_len - d, cols] = gy[d:, cols]
        return gx


class Dense(Layer):
    """Per-timestep affine map (T, Cin) -> (T, Cout)."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
    ):
        super().__init__()
        rng = rng or np.random.default_rng()
        if zero_init:
            weight = np.zeros((out_features, in_features))
        else:
            bound = np.sqrt(1.0 / in_features)
            weight = rng.uniform(-bound, bound, size=(out_features, in_features))
        self._register("weight", weight)
        self._register("bias", np.zeros(out_features))
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._ctx = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._take_ctx()
        self.grads["weight"] += gy.T @ x
        self.grads["bias"] += gy.sum(axis=0)
        return gy @ self.params["weight"]
