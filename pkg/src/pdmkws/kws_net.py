"""Keyword-spotting network: 5 layers from PDM bits to class logits.

Layer 1 convolves the raw bitstream with kernel 3*alpha and stride
floor(3*alpha/2); layers 2-4 are dilated convolutions (kernel 3, stride 3,
dilation 2) onto spiking neurons, with optional channel recurrence on layers
3-4, optional fixed axonal delays after every hidden layer, and optional
sparsity masks on the layer 2-4 feedforward weights. The readout is a dense
map onto non-spiking leaky integrators; class logits are the time sums of the
readout membrane.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .pdm_codec import PdmSignal
from .snn import (
    AxonalDelay,
    Conv1d,
    Dense,
    LeakyIntegrator,
    NeuronParams,
    ParaLIF,
    RecurrentParaLIF,
    SpikeTensor,
    conv_output_length,
)

CHECKPOINT_SCHEMA = 1

ALLOWED_FAN_IN = (128, 64, 32, 16, 8)
SPARSITY_PERCENT_TO_FAN_IN = {0: 128, 50: 64, 75: 32, 88: 16, 94: 8}
MAX_DELAY_STEPS = 30


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture hyperparameters, ablation flags and seeds."""

    alpha: int
    hidden_channels: int = 128
    classes: int = 35
    recurrence: bool = True
    delays: bool = True
    sparsity_fan_in: int = 128
    weight_seed: int = 0
    delay_seed: int = 1
    mask_seed: int = 2
    input_polarity: str = "unipolar"
    beta: float = 0.95
    theta: float = 1.0
    surrogate_slope: float = 10.0

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.classes}")
        if self.sparsity_fan_in not in ALLOWED_FAN_IN:
            raise ValueError(
                f"sparsity fan-in must be one of {ALLOWED_FAN_IN}, got {self.sparsity_fan_in}"
            )
        if self.sparsity_fan_in > self.hidden_channels:
            raise ValueError(
                f"fan-in {self.sparsity_fan_in} exceeds hidden channels {self.hidden_channels}"
            )
        if self.input_polarity not in ("unipolar", "bipolar"):
            raise ValueError(f"unknown input polarity {self.input_polarity!r}")

    @property
    def layer1_kernel(self) -> int:
        return 3 * self.alpha

    @property
    def layer1_stride(self) -> int:
        return max(1, (3 * self.alpha) // 2)

    @property
    def neuron(self) -> NeuronParams:
        return NeuronParams(self.beta, self.theta, self.surrogate_slope)


def count_params(spec: NetworkSpec) -> int:
    """Exact trainable-scalar count for the architecture."""
    h = spec.hidden_channels
    layer1 = h * spec.layer1_kernel + h
    convs = 3 * (h * spec.sparsity_fan_in * 3 + h)
    recurrent = 2 * (h * h + h) if spec.recurrence else 0
    readout = h * spec.classes + spec.classes
    return layer1 + convs + recurrent + readout


def make_masks(hidden_channels: int, fan_in: int, seed: int) -> np.ndarray:
    """Per-layer binary (Cout, Cin) masks for layers 2-4.

    Each output channel keeps a uniformly drawn fixed subset of fan_in input
    channels; fan_in == hidden_channels keeps everything.
    """
    if fan_in not in ALLOWED_FAN_IN:
        raise ValueError(f"fan-in must be one of {ALLOWED_FAN_IN}, got {fan_in}")
    masks = np.zeros((3, hidden_channels, hidden_channels), dtype=np.uint8)
    if fan_in >= hidden_channels:
        masks[:] = 1
        return masks
    rng = np.random.default_rng(seed)
    for layer in range(3):
        for out_ch in range(hidden_channels):
            keep = rng.choice(hidden_channels, size=fan_in, replace=False)
            masks[layer, out_ch, keep] = 1
    return masks


@dataclass
class ForwardResult:
    """Logits plus the per-hidden-layer spike rasters retained for metrics."""

    logits: np.ndarray
    spikes: list[SpikeTensor]
    readout_membrane: np.ndarray

    @property
    def prediction(self) -> int:
        return int(np.argmax(self.logits))

    @property
    def total_spikes(self) -> int:
        return sum(s.total_spikes for s in self.spikes)


class KwsNetwork:
    """Built network state: layers in forward order with named parameters."""

    def __init__(self, spec: NetworkSpec, backend: str | None = None):
        self.spec = spec
        h = spec.hidden_channels
        neuron = spec.neuron
        wrng = np.random.default_rng(spec.weight_seed)
        drng = np.random.default_rng(spec.delay_seed)
        masks = make_masks(h, spec.sparsity_fan_in, spec.mask_seed)
        # Delay vectors are always drawn so weights are identical across
        # ablation flags; the zero vector disables the shift. Channel order is
        # exchangeable at initialization (iid weights), so sorting each drawn
        # vector is distribution-preserving and keeps equal delays in
        # contiguous channel blocks for cheap shifting.
        drawn = [np.sort(drng.integers(0, MAX_DELAY_STEPS + 1, size=h)) for _ in range(4)]
        delays = drawn if spec.delays else [np.zeros(h, dtype=np.int64)] * 4

        # Hidden conv biases start at theta/2: the unipolar bitstream drive has
        # positive mean, and centering membranes halfway to threshold keeps
        # early spike rates moderate instead of zero. The readout weight is
        # zero-initialized so untrained logits are exactly zero (loss ln K).
        half_theta = 0.5 * spec.theta
        self.conv1 = Conv1d(
            1, h, spec.layer1_kernel, stride=spec.layer1_stride, rng=wrng,
            bias_init=half_theta,
        )
        self.lif1 = ParaLIF(neuron, backend=backend)
        self.delay1 = AxonalDelay(delays[0])
        self.conv2 = Conv1d(
            h, h, 3, stride=3, dilation=2, mask=masks[0], rng=wrng, bias_init=half_theta
        )
        self.lif2 = ParaLIF(neuron, backend=backend)
        self.delay2 = AxonalDelay(delays[1])
        self.conv3 = Conv1d(
            h, h, 3, stride=3, dilation=2, mask=masks[1], rng=wrng, bias_init=half_theta
        )
        self.lif3 = (
            RecurrentParaLIF(h, neuron, rng=wrng, backend=backend)
            if spec.recurrence
            else ParaLIF(neuron, backend=backend)
        )
        self.delay3 = AxonalDelay(delays[2])
        self.conv4 = Conv1d(
            h, h, 3, stride=3, dilation=2, mask=masks[2], rng=wrng, bias_init=half_theta
        )
        self.lif4 = (
            RecurrentParaLIF(h, neuron, rng=wrng, backend=backend)
            if spec.recurrence
            else ParaLIF(neuron, backend=backend)
        )
        self.delay4 = AxonalDelay(delays[3])
        self.readout = Dense(h, spec.classes, rng=wrng, zero_init=True)
        self.li = LeakyIntegrator(neuron, backend=backend)

        self._layers = {
            "conv1": self.conv1,
            "lif1": self.lif1,
            "conv2": self.conv2,
            "lif2": self.lif2,
            "conv3": self.conv3,
            "lif3": self.lif3,
            "conv4": self.conv4,
            "lif4": self.lif4,
            "readout": self.readout,
        }

    # -- parameter bookkeeping ------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameters in declared (checkpoint block) order."""
        out: dict[str, np.ndarray] = {}
        for lname, layer in self._layers.items():
            for pname, value in layer.params.items():
                out[f"{lname}.{pname}"] = value
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for lname, layer in self._layers.items():
            for pname, value in layer.grads.items():
                out[f"{lname}.{pname}"] = value
        return out

    def zero_grad(self) -> None:
        for layer in self._layers.values():
            layer.zero_grad()

    def num_trainable_params(self) -> int:
        """Stored trainable scalars, masked conv entries excluded."""
        total = 0
        for layer in self._layers.values():
            if isinstance(layer, Conv1d):
                total += layer.trainable_count()
            else:
                total += sum(p.size for p in layer.params.values())
        return total

    def set_spike_mode(self, mode: str) -> None:
        for layer in (self.lif1, self.lif2, self.lif3, self.lif4):
            if mode not in ("hard", "relaxed"):
                raise ValueError(f"unknown spike mode {mode!r}")
            layer.spike_mode = mode

    # -- shapes ----------------------------------------------------------------

    def layer_output_lengths(self, pdm_length: int) -> list[int]:
        spec = self.spec
        lengths = [conv_output_length(pdm_length, spec.layer1_kernel, spec.layer1_stride, 1)]
        for _ in range(3):
            lengths.append(conv_output_length(lengths[-1], 3, 3, 2))
        return lengths

    def step_rates(self, pdm_rate_hz: float) -> list[float]:
        rates = [pdm_rate_hz / self.spec.layer1_stride]
        for _ in range(3):
            rates.append(rates[-1] / 3)
        return rates

    # -- forward / backward -----------------------------------------------------

    def forward(self, pdm: PdmSignal | np.ndarray) -> ForwardResult:
        """Run PDM bits through the network; logits are time sums of V5."""
        if isinstance(pdm, PdmSignal):
            if pdm.alpha != self.spec.alpha:
                raise ValueError(
                    f"PDM alpha {pdm.alpha} does not match network alpha {self.spec.alpha}"
                )
            bits = pdm.bits
            rate = float(pdm.rate_hz)
        else:
            bits = np.asarray(pdm)
            rate = float(16000 * self.spec.alpha)
        x = bits.astype(np.float64)[:, None]
        if self.spec.input_polarity == "bipolar":
            x = 2.0 * x - 1.0

        rates = self.step_rates(rate)
        spikes: list[SpikeTensor] = []

        s = self.lif1.forward(self.conv1.forward(x))
        spikes.append(SpikeTensor(s.astype(np.uint8), rates[0]))
        s = self.delay1.forward(s)
        s = self.lif2.forward(self.conv2.forward(s))
        spikes.append(SpikeTensor(s.astype(np.uint8), rates[1]))
        s = self.delay2.forward(s)
        s = self.lif3.forward(self.conv3.forward(s))
        spikes.append(SpikeTensor(s.astype(np.uint8), rates[2]))
        s = self.delay3.forward(s)
        s = self.lif4.forward(self.conv4.forward(s))
        spikes.append(SpikeTensor(s.astype(np.uint8), rates[3]))
        s = self.delay4.forward(s)
        v5 = self.li.forward(self.readout.forward(s))
        return ForwardResult(v5.sum(axis=0), spikes, v5)

    def backward(self, dlogits: np.ndarray, readout_length: int) -> None:
        """Accumulate parameter gradients from d(loss)/d(logits)."""
        gv5 = np.broadcast_to(dlogits, (readout_length, len(dlogits))).copy()
        g = self.readout.backward(self.li.backward(gv5))
        g = self.lif4.backward(self.delay4.backward(g))
        g = self.conv4.backward(g)
        g = self.lif3.backward(self.delay3.backward(g))
        g = self.conv3.backward(g)
        g = self.lif2.backward(self.delay2.backward(g))
        g = self.conv2.backward(g)
        g = self.lif1.backward(self.delay1.backward(g))
        self.conv1.backward(g)


def build(spec: NetworkSpec, backend: str | None = None) -> KwsNetwork:
    """Construct a seeded network for the spec."""
    return KwsNetwork(spec, backend=backend)


# -- checkpoint container -------------------------------------------------------


def save_checkpoint(net: KwsNetwork, path, extra: dict | None = None) -> None:
    """JSON header (spec, seeds, block table, schema) + float32 LE blocks."""
    params = net.parameters()
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "spec": asdict(net.spec),
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for value in params.values():
            fh.write(value.astype("<f4").tobytes())


def load_checkpoint(path, backend: str | None = None) -> tuple[KwsNetwork, dict]:
    """Rebuild the network from a checkpoint; returns (network, header)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack_from("<I", raw)
    if len(raw) < 4 + hlen:
        raise FormatError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[4 : 4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header") from exc
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise FormatError(f"{path}: unsupported checkpoint schema {header.get('schema')}")
    spec = NetworkSpec(**header["spec"])
    net = build(spec, backend=backend)
    params = net.parameters()
    offset = 4 + hlen
    for block in header["blocks"]:
        name, shape = block["name"], tuple(block["shape"])
        if name not in params or params[name].shape != shape:
            raise FormatError(f"{path}: unexpected block {name} {shape}")
        n_bytes = int(np.prod(shape)) * 4
        if offset + n_bytes > len(raw):
            raise FormatError(f"{path}: truncated block {name}")
        data = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        params[name][...] = data.reshape(shape).astype(np.float64)
        offset += n_bytes
    return net, header
