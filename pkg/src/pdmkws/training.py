"""Surrogate-gradient training: Adamax, reduce-on-plateau, time-shift augmentation.

Reference mode is single-threaded and fully determined by (seed, data,
config); worker threads only prefetch PDM encodings and cannot change any
result because per-utterance augmentation draws from per-(epoch, index)
seeded generators.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics_bench
from .datasets import DataSplits, LabeledUtterance
from .errors import TrainingError
from .kws_net import KwsNetwork, NetworkSpec, build, count_params, save_checkpoint
from .pdm_codec import pcm2pdm_if, pcm2pdm_mod, pcm2pdm_par, pcm2pdm_seq
from .signal_io import PcmSignal, oversample, to_unipolar


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    plateau_factor: float = 0.7
    plateau_patience: int = 10
    epochs: int = 150
    batch_size: int = 32
    shift_range_s: float = 0.3
    augment: bool = True
    seed: int = 0
    workers: int = 1
    encode_algo: str = "par"
    oversample_method: str = "hold"
    stop_at_valid_acc: float | None = None

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.plateau_patience}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


def adamax_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    u: np.ndarray,
    t: int,
    lr: float,
    config: TrainConfig,
) -> None:
    """One in-place Adamax update on a single tensor.

    m <- b1*m + (1-b1)*g ; u <- max(b2*u, |g|) ; p <- p - (lr/(1-b1^t)) * m/(u+eps).
    """
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    m *= config.beta1
    m += (1.0 - config.beta1) * grad
    np.maximum(config.beta2 * u, np.abs(grad), out=u)
    param -= (lr / (1.0 - config.beta1**t)) * m / (u + config.epsilon)


class Adamax:
    """Adamax over a named parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.config = config
        self.lr = config.learning_rate
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.u = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, param in self.params.items():
            grad = grads[name]
            if not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite gradient in {name}")
            adamax_step(param, grad, self.m[name], self.u[name], self.t, self.lr, self.config)


class PlateauScheduler:
    """Multiply lr by the factor after `patience` epochs without a new best."""

    def __init__(self, config: TrainConfig):
        self.factor = config.plateau_factor
        self.patience = config.plateau_patience
        self.lr = config.learning_rate
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, valid_accuracy: float) -> float:
        if valid_accuracy > self.best:
            self.best = valid_accuracy
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr


def plateau_lr_multiplier(history, config: TrainConfig) -> float:
    """Replay a validation-accuracy history; return the final lr multiplier."""
    sched = PlateauScheduler(config)
    for acc in history:
        sched.update(acc)
    return sched.lr / config.learning_rate


def augment_shift(signal: PcmSignal, rng: np.random.Generator, max_shift_s: float = 0.3) -> PcmSignal:
    """Time-shift by a uniform draw in [-max_shift_s, max_shift_s], zero-padded."""
    shift = int(round(rng.uniform(-max_shift_s, max_shift_s) * signal.sample_rate_hz))
    return shift_samples(signal, shift)


def shift_samples(signal: PcmSignal, shift: int) -> PcmSignal:
    x = signal.samples
    y = np.zeros_like(x)
    if shift > 0:
        y[shift:] = x[: len(x) - shift]
    elif shift < 0:
        y[: len(x) + shift] = x[-shift:]
    else:
        y = x.copy()
    return PcmSignal(y, signal.sample_rate_hz)


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable cross-entropy on softmax logits; returns (loss, dloss/dlogits)."""
    z = logits - logits.max()
    log_probs = z - np.log(np.exp(z).sum())
    probs = np.exp(log_probs)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return -float(log_probs[label]), dlogits


_ENCODERS = {"par": None, "mod": pcm2pdm_mod, "if": pcm2pdm_if, "seq": pcm2pdm_seq}


def encode_utterance(
    pcm: PcmSignal, alpha: int, algo: str = "par", method: str = "hold"
) -> np.ndarray:
    """PCM -> unipolar -> oversample -> PDM bits, per the configured algorithm."""
    if algo not in _ENCODERS:
        raise ValueError(f"unknown encode algorithm {algo!r}")
    unipolar = oversample(to_unipolar(pcm), alpha, method=method)
    if algo == "par":
        return pcm2pdm_par(unipolar.samples)
    if algo == "seq":
        y, _ = pcm2pdm_seq(2.0 * unipolar.samples - 1.0)
        return (y > 0).astype(np.uint8)
    bits, _ = _ENCODERS[algo](unipolar.samples)
    return bits


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    valid_acc: float
    lr: float
    spike_rate: float
    rsr: float


LOG_HEADER = ("epoch", "loss", "train_acc", "valid_acc", "lr", "spike_rate", "rsr")


@dataclass
class TrainResult:
    records: list[EpochRecord]
    best_valid_acc: float
    best_epoch: int
    checkpoint_path: Path | None
    spec: NetworkSpec
    config: TrainConfig

    @property
    def initial_loss(self) -> float:
        return self.records[0].loss


def _utterance_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 0x5F, epoch, index)))


class _EncodedCache:
    """Per-utterance PDM encodings; augmented items are re-encoded each epoch."""

    def __init__(self, items: list[LabeledUtterance], spec: NetworkSpec, cfg: TrainConfig):
        self.items = items
        self.spec = spec
        self.cfg = cfg
        self.static: dict[int, np.ndarray] = {}

    def encode_static(self, idx: int) -> np.ndarray:
        bits = self.static.get(idx)
        if bits is None:
            bits = encode_utterance(
                self.items[idx].signal,
                self.spec.alpha,
                self.cfg.encode_algo,
                self.cfg.oversample_method,
            )
            self.static[idx] = bits
        return bits

    def encode_train(self, idx: int, epoch: int) -> np.ndarray:
        if not self.cfg.augment:
            return self.encode_static(idx)
        rng = _utterance_rng(self.cfg.seed, epoch, idx)
        shifted = augment_shift(self.items[idx].signal, rng, self.cfg.shift_range_s)
        return encode_utterance(
            shifted, self.spec.alpha, self.cfg.encode_algo, self.cfg.oversample_method
        )

    def prefetch(self, indices, epoch: int, workers: int):
        if workers <= 1:
            return {i: self.encode_train(i, epoch) for i in indices}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(lambda i: self.encode_train(i, epoch), indices))
        return dict(zip(indices, encoded))


def evaluate(
    net: KwsNetwork,
    items: list[LabeledUtterance],
    cfg: TrainConfig | None = None,
    cache: _EncodedCache | None = None,
) -> tuple[float, metrics_bench.MetricsReport]:
    """Accuracy plus the efficiency metrics over an evaluation split."""
    if not items:
        raise ValueError("evaluation split is empty")
    cfg = cfg or TrainConfig(augment=False)
    cache = cache or _EncodedCache(items, net.spec, cfg)
    correct = 0
    rates = []
    per_layer = None
    for idx, utt in enumerate(items):
        bits = cache.encode_static(idx)
        result = net.forward(bits)
        if result.prediction == utt.label:
            correct += 1
        duration = len(bits) / (16000 * net.spec.alpha)
        rates.append(metrics_bench.spike_rate(result.spikes, duration))
        layer_rates = [s.total_spikes / duration for s in result.spikes]
        per_layer = (
            layer_rates
            if per_layer is None
            else [a + b for a, b in zip(per_layer, layer_rates)]
        )
    accuracy = correct / len(items)
    report = metrics_bench.build_report(
        alpha=net.spec.alpha,
        sparsity_fan_in=net.spec.sparsity_fan_in,
        params=count_params(net.spec),
        spike_rate_hz=float(np.mean(rates)),
        hidden_neurons=4 * net.spec.hidden_channels,
        accuracy=accuracy,
        per_layer_spike_rates=tuple(r / len(items) for r in per_layer),
    )
    return accuracy, report


def train(
    spec: NetworkSpec,
    cfg: TrainConfig,
    data: DataSplits,
    checkpoint_path=None,
    log_path=None,
    verbose: bool = False,
) -> TrainResult:
    """Train with cross-entropy on cumulative-sum logits; keep the best-valid net.

    Per-epoch records hold loss, train/valid accuracy, lr and the spike-rate
    metrics from the validation pass. Aborts with a diagnostic checkpoint on
    non-finite loss.
    """
    if not data.train or not data.valid:
        raise ValueError("training requires non-empty train and valid splits")
    net = build(spec)
    opt = Adamax(net.parameters(), cfg)
    sched = PlateauScheduler(cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x11)))
    train_cache = _EncodedCache(data.train, spec, cfg)
    valid_cache = _EncodedCache(data.valid, spec, cfg)

    records: list[EpochRecord] = []
    best_acc, best_epoch = -1.0, -1
    log_file = None
    writer = None
    if log_path is not None:
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)

    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(data.train))
            lr_in_effect = opt.lr
            losses = []
            correct = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [int(i) for i in order[start : start + cfg.batch_size]]
                encoded = train_cache.prefetch(batch, epoch, cfg.workers)
                net.zero_grad()
                for idx in batch:
                    bits = encoded[idx]
                    result = net.forward(bits)
                    loss, dlogits = softmax_cross_entropy(
                        result.logits, data.train[idx].label
                    )
                    if not math.isfinite(loss):
                        if checkpoint_path is not None:
                            diag = Path(str(checkpoint_path) + ".diag")
                            save_checkpoint(net, diag, extra={"aborted_epoch": epoch})
                        raise TrainingError(f"non-finite loss at epoch {epoch}")
                    losses.append(loss)
                    if result.prediction == data.train[idx].label:
                        correct += 1
                    net.backward(
                        dlogits / len(batch), result.readout_membrane.shape[0]
                    )
                opt.step(net.gradients())

            valid_acc, report = evaluate(net, data.valid, cfg, valid_cache)
            record = EpochRecord(
                epoch=epoch,
                loss=float(np.mean(losses)),
                train_acc=correct / len(data.train),
                valid_acc=valid_acc,
                lr=lr_in_effect,
                spike_rate=report.spike_rate,
                rsr=report.rsr,
            )
            records.append(record)
            if writer is not None:
                writer.writerow(
                    [
                        record.epoch,
                        f"{record.loss:.6f}",
                        f"{record.train_acc:.6f}",
                        f"{record.valid_acc:.6f}",
                        f"{record.lr:.8f}",
                        f"{record.spike_rate:.3f}",
                        f"{record.rsr:.6f}",
                    ]
                )
                log_file.flush()
            if verbose:
                print(
                    f"epoch {epoch:3d}  loss {record.loss:.4f}  "
                    f"train {record.train_acc:.3f}  valid {record.valid_acc:.3f}  "
                    f"lr {record.lr:.5f}"
                )
            if valid_acc > best_acc:
                best_acc, best_epoch = valid_acc, epoch
                if checkpoint_path is not None:
                    save_checkpoint(
                        net,
                        checkpoint_path,
                        extra={"epoch": epoch, "valid_acc": valid_acc},
                    )
            opt.lr = sched.update(valid_acc)
            if cfg.stop_at_valid_acc is not None and valid_acc >= cfg.stop_at_valid_acc:
                break
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        records=records,
        best_valid_acc=best_acc,
        best_epoch=best_epoch,
        checkpoint_path=None if checkpoint_path is None else Path(checkpoint_path),
        spec=spec,
        config=cfg,
    )
