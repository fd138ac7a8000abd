"""Command-line interface.

One executable with encode/decode, dataset synthesis, training, evaluation,
metrics, parameter accounting, benchmark and sweep subcommands. Every command
that writes an artifact drops a JSON run manifest beside it recording the
resolved configuration, seeds, versions and input hashes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__, backends
from .errors import PdmKwsError
from .kws_net import (
    SPARSITY_PERCENT_TO_FAN_IN,
    NetworkSpec,
    count_params,
    load_checkpoint,
)
from .metrics_bench import METRICS_CSV_FIELDS, bench_codec
from .pdm_codec import encode as codec_encode
from .pdm_codec import measure_snr, pdm2pcm, read_pdm, write_pdm
from .signal_io import read_wav, write_wav

DATA_ROOT_ENV = "PDMKWS_DATA"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on user error instead of argparse's 2
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(output_path, command: str, args: dict, inputs: tuple = ()) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in args.items() if not k.startswith("_")},
        "versions": {
            "pdmkws": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "backend": backends.default_backend(),
        "input_hashes": {str(p): _sha256(p) for p in inputs},
    }
    path = Path(str(output_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fan_in(sparsity_percent: int, channels: int = 128) -> int:
    if sparsity_percent not in SPARSITY_PERCENT_TO_FAN_IN:
        raise ValueError(
            f"sparsity must be one of {sorted(SPARSITY_PERCENT_TO_FAN_IN)}, "
            f"got {sparsity_percent}"
        )
    fan = SPARSITY_PERCENT_TO_FAN_IN[sparsity_percent]
    # scale the 128-channel table to reduced widths (e.g. 16ch at 50% -> 8)
    return fan * channels // 128 if channels != 128 else fan


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return value == "on"


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v]


def _data_root(args) -> Path:
    if args.data is not None:
        return Path(args.data)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise ValueError(f"no --data given and {DATA_ROOT_ENV} is not set")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdmkws", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="encode a WAV file into a PDM bitstream")
    p.add_argument("--in", dest="in_path", required=True, help="input WAV (mono 16-bit PCM)")
    p.add_argument("--osr", type=int, required=True, help="oversampling ratio alpha")
    p.add_argument("--algo", choices=("seq", "mod", "if", "par"), default="par")
    p.add_argument("--method", choices=("hold", "sinc"), default="hold",
                   help="oversampling interpolation")
    p.add_argument("--out", required=True, help="output .pdm container")

    p = sub.add_parser("decode", help="decode a PDM bitstream back to WAV")
    p.add_argument("--in", dest="in_path", required=True, help="input .pdm container")
    p.add_argument("--taps", type=int, default=None, help="FIR taps (odd, default 16*alpha+1)")
    p.add_argument("--out", required=True, help="output WAV")

    p = sub.add_parser("bench-codec", help="benchmark encoder variants and backends")
    p.add_argument("--length", type=int, default=1 << 20)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--chunk-len", type=int, default=65536)
    p.add_argument("--workers", type=_int_list, default=[1, 4], help="comma list, e.g. 1,4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional CSV output")

    p = sub.add_parser("synth-data", help="materialize the synthetic keyword dataset")
    p.add_argument("--out", required=True, help="output directory (GSC layout)")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a keyword-spotting network")
    p.add_argument("--data", default=None, help=f"dataset root (default ${DATA_ROOT_ENV})")
    p.add_argument("--osr", type=int, default=4)
    p.add_argument("--sparsity", type=int, default=0, help="percent: 0, 50, 75, 88 or 94")
    p.add_argument("--channels", type=int, default=16, help="hidden channels per layer")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--aug", type=_on_off, default=False, help="on or off")
    p.add_argument("--rec", type=_on_off, default=True, help="on or off")
    p.add_argument("--delays", type=_on_off, default=True, help="on or off")
    p.add_argument("--algo", choices=("par", "mod", "if", "seq"), default="par",
                   help="PDM encoding fed to the network")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint file")
    p.add_argument("--log", default=None, help="per-epoch CSV log")
    p.add_argument("--preset", choices=("gsc-full",), default=None,
                   help="gsc-full: the full-scale configuration (not desk-scale)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")

    p = sub.add_parser("metrics", help="emit the efficiency metrics CSV for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--out", required=True, help="CSV output")

    p = sub.add_parser("params", help="print the parameter count for (alpha, sparsity)")
    p.add_argument("--osr", type=int, required=True)
    p.add_argument("--sparsity", type=int, default=0)
    p.add_argument("--rec", type=_on_off, default=True)
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--classes", type=int, default=35)

    p = sub.add_parser("sweep", help="accuracy sweep over oversampling ratios or sparsity")
    p.add_argument("--data", default=None)
    p.add_argument("--osr", type=_int_list, default=[1, 2, 4], help="comma list of alphas")
    p.add_argument("--sparsity", type=_int_list, default=None,
                   help="comma list of sparsity percents (sweeps sparsity instead)")
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--out", required=True, help="sweep CSV")

    return parser


# -- command implementations ----------------------------------------------------


def _cmd_encode(args) -> int:
    pcm = read_wav(args.in_path)
    pdm = codec_encode(pcm, args.osr, algo=args.algo, method=args.method)
    write_pdm(pdm, args.out)
    _write_manifest(args.out, "encode", vars(args), inputs=(args.in_path,))
    print(f"{args.out}: {len(pdm)} bits at {pdm.rate_hz} Hz (alpha={pdm.alpha})")
    return 0


def _cmd_decode(args) -> int:
    pdm = read_pdm(args.in_path)
    pcm = pdm2pcm(pdm, taps=args.taps)
    write_wav(pcm, args.out)
    _write_manifest(args.out, "decode", vars(args), inputs=(args.in_path,))
    print(f"{args.out}: {len(pcm)} samples at {pcm.sample_rate_hz} Hz")
    return 0


def _cmd_bench_codec(args) -> int:
    report = bench_codec(
        length=args.length,
        repeats=args.repeats,
        chunk_len=args.chunk_len,
        worker_counts=tuple(args.workers),
        seed=args.seed,
    )
    print(report.to_csv(), end="")
    ref = report.reference_speedup()
    print(f"# reference speedup (numpy par_chunked vs numpy seq_mod): {ref:.1f}x")
    for name in backends.backend_names():
        s = report.speedup("seq_mod", "par_chunked", name, max(args.workers))
        print(f"# {name}: par_chunked(workers={max(args.workers)}) vs seq_mod: {s:.1f}x")
    if args.out:
        Path(args.out).write_text(report.to_csv())
        _write_manifest(args.out, "bench-codec", vars(args))
    return 0


def _cmd_synth_data(args) -> int:
    from .datasets import materialize, synth_dataset

    splits = synth_dataset(classes=args.classes, per_class=args.per_class, seed=args.seed)
    materialize(splits, args.out)
    _write_manifest(Path(args.out) / "dataset", "synth-data", vars(args))
    print(
        f"{args.out}: {len(splits.train)}/{len(splits.valid)}/{len(splits.test)} "
        f"train/valid/test clips, classes: {', '.join(splits.class_names)}"
    )
    return 0


def _train_spec_config(args):
    from .training import TrainConfig

    if args.preset == "gsc-full":
        args.osr, args.channels, args.sparsity = 64, 128, 0
        args.epochs, args.aug = 150, True
    spec = NetworkSpec(
        alpha=args.osr,
        hidden_channels=args.channels,
        classes=args._classes,
        recurrence=args.rec,
        delays=args.delays,
        sparsity_fan_in=_fan_in(args.sparsity, args.channels),
        weight_seed=args.seed,
        delay_seed=args.seed + 1,
        mask_seed=args.seed + 2,
    )
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        augment=args.aug,
        seed=args.seed,
        workers=args.workers,
        encode_algo=args.algo,
    )
    return spec, cfg


def _cmd_train(args) -> int:
    from .datasets import load_gsc
    from .training import train

    data = load_gsc(_data_root(args))
    args._classes = len(data.class_names)
    spec, cfg = _train_spec_config(args)
    result = train(spec, cfg, data, checkpoint_path=args.out, log_path=args.log, verbose=True)
    manifest_args = dict(vars(args))
    manifest_args["resolved_spec"] = spec.__dict__ | {}
    _write_manifest(args.out, "train", manifest_args)
    print(
        f"best valid accuracy {result.best_valid_acc:.4f} at epoch {result.best_epoch}; "
        f"checkpoint: {args.out}"
    )
    return 0


def _eval_split(args):
    from .datasets import load_gsc
    from .training import evaluate

    net, header = load_checkpoint(args.ckpt)
    data = load_gsc(_data_root(args))
    split = getattr(data, args.split)
    accuracy, report = evaluate(net, split)
    return net, accuracy, report


def _cmd_eval(args) -> int:
    _, accuracy, report = _eval_split(args)
    print(f"accuracy: {accuracy:.4f}")
    print(
        f"params: {report.params}  isr: {report.isr:.0f}/s  "
        f"sr: {report.spike_rate:.1f}/s  rsr: {report.rsr:.4f}"
    )
    return 0


def _cmd_metrics(args) -> int:
    _, accuracy, report = _eval_split(args)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_CSV_FIELDS)
        writer.writeheader()
        writer.writerow(report.csv_row())
    _write_manifest(args.out, "metrics", vars(args), inputs=(args.ckpt,))
    print(f"accuracy: {accuracy:.4f}; metrics written to {args.out}")
    return 0


def _cmd_params(args) -> int:
    spec = NetworkSpec(
        alpha=args.osr,
        hidden_channels=args.channels,
        classes=args.classes,
        recurrence=args.rec,
        sparsity_fan_in=_fan_in(args.sparsity),
    )
    print(count_params(spec))
    return 0


def _cmd_sweep(args) -> int:
    from .datasets import load_gsc
    from .training import TrainConfig

    data = load_gsc(_data_root(args))
    sweep_sparsity = args.sparsity is not None
    values = args.sparsity if sweep_sparsity else args.osr
    key = "sparsity" if sweep_sparsity else "alpha"
    rows = []
    for value in values:
        accs = []
        for seed in args.seeds:
            spec = NetworkSpec(
                alpha=args.osr[0] if sweep_sparsity else value,
                hidden_channels=args.channels,
                classes=len(data.class_names),
                sparsity_fan_in=_fan_in(value if sweep_sparsity else 0, args.channels),
                weight_seed=seed,
                delay_seed=seed + 1,
                mask_seed=seed + 2,
            )
            cfg = TrainConfig(epochs=args.epochs, augment=False, seed=seed)
            acc, _ = evaluate_trained(spec, cfg, data)
            accs.append(acc)
        rows.append((value, float(np.mean(accs)), float(np.std(accs))))
        print(f"{key}={value}: accuracy {rows[-1][1]:.4f} +- {rows[-1][2]:.4f}")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([key, "accuracy_mean", "accuracy_std"])
        for value, mean, std in rows:
            writer.writerow([value, f"{mean:.6f}", f"{std:.6f}"])
    _write_manifest(args.out, "sweep", vars(args))
    return 0


def evaluate_trained(spec, cfg, data):
    """Train and report test accuracy (helper for the sweep command)."""
    import tempfile

    from .training import evaluate, train

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "sweep_ckpt.bin"
        train(spec, cfg, data, checkpoint_path=ckpt)
        net, _ = load_checkpoint(ckpt)
        return evaluate(net, data.test)


_COMMANDS = {
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "bench-codec": _cmd_bench_codec,
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "metrics": _cmd_metrics,
    "params": _cmd_params,
    "sweep": _cmd_sweep,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (PdmKwsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(dispatch())
