"""``poregan`` command line: synthesize, analyze, train, generate, compare.

Every command prints its resolved configuration as JSON, writes outputs
atomically and places a ``.provenance.json`` stamp next to each output.
Exit codes: 0 success, 2 bad configuration or flags, 3 I/O or file format
failure, 4 failed validation of inputs.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .correlation import EXHAUSTIVE, MonteCarlo, two_point_correlation
from .morphology import RevNotReachedError, analyze, determine_rev, reports_to_csv, rev_curve
from .spgan import SpganConfig, load_checkpoint, synthesize, train
from .stats import compare_populations
from .synthdata import FieldSpec, bernoulli_volume, gaussian_field_volume
from .tensor import CheckpointError
from .volume import (
    Phase,
    Slice2D,
    VolumeFormatError,
    atomic_write_bytes,
    central_slice,
    list_volumes,
    random_origins,
    extract_subvolume,
    volume_io_load,
    volume_io_save,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class Run:
    """Output bookkeeping for one invocation."""

    def __init__(self, argv: list[str], seed):
        self.argv = list(argv)
        self.seed = seed

    def stamp(self) -> bytes:
        doc = {"command": self.argv, "seed": self.seed, "tool": "poregan", "version": __version__}
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()

    def write(self, path, payload) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(payload, str):
            payload = payload.encode()
        atomic_write_bytes(path, payload)
        atomic_write_bytes(path.with_name(path.name + ".provenance.json"), self.stamp())

    def save_volume(self, vol, stem) -> None:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        volume_io_save(vol, stem)
        atomic_write_bytes(stem.with_name(stem.name + ".provenance.json"), self.stamp())

    def stamp_dir(self, directory) -> None:
        atomic_write_bytes(Path(directory) / "provenance.json", self.stamp())


def _phase(name: str) -> Phase:
    return Phase[name.upper()]


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- commands ----------------------------------------------------------------

def cmd_synth(args, run: Run) -> int:
    stems = [Path(args.out)] if args.count == 1 else [
        Path(f"{args.out}_{i:03d}") for i in range(args.count)
    ]
    for i, stem in enumerate(stems):
        seed = args.seed + i
        if args.kind == "gaussian":
            vol = gaussian_field_volume(
                FieldSpec(args.size, args.correlation_length, args.porosity, seed)
            )
        else:
            vol = bernoulli_volume(args.size, args.porosity, seed)
        run.save_volume(vol, stem)
    return EXIT_OK


def cmd_analyze(args, run: Run) -> int:
    vol = volume_io_load(args.volume)
    report = analyze(vol, _phase(args.phase))
    out = Path(args.out)
    run.write(out.with_suffix(".json"), report.to_json())
    run.write(out.with_suffix(".csv"), reports_to_csv([report]))
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_tpc(args, run: Run) -> int:
    vol = volume_io_load(args.volume)
    if args.estimator == "exhaustive":
        estimator = EXHAUSTIVE
    else:
        estimator = MonteCarlo(n_pairs=args.pairs, seed=args.seed)
    curve = two_point_correlation(vol, _phase(args.phase), args.max_r, estimator)
    run.write(args.out, curve.to_csv())
    return EXIT_OK


def cmd_rev(args, run: Run) -> int:
    vol = volume_io_load(args.volume)
    curve = rev_curve(
        vol,
        start_size=args.start_size,
        step=args.step,
        min_size=args.min_size,
        samples_per_size=args.samples,
        seed=args.seed,
    )
    try:
        rev = determine_rev(curve, args.tolerance)
    except RevNotReachedError as exc:
        print(f"REV not reached: {exc}", file=sys.stderr)
        rev = None
    out = Path(args.out)
    run.write(out.with_suffix(".csv"), curve.to_csv())
    summary = {"rev": rev, "tolerance": args.tolerance, "sizes": curve.sizes}
    run.write(out.with_suffix(".json"), _dump(summary))
    print(_dump(summary), end="")
    return EXIT_OK


def _load_config(path) -> SpganConfig:
    text = Path(path).read_text()
    try:
        return SpganConfig.from_json(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_train(args, run: Run) -> int:
    config = _load_config(args.config)
    print(config.to_json(), end="")

    def progress(rec):
        if args.verbose and (rec.iteration + 1) % args.verbose == 0:
            print(
                f"iter {rec.iteration + 1}: ae={rec.ae_loss:.4f} d={rec.d_loss:.4f} "
                f"g={rec.g_loss:.4f} D(x)={rec.d_real:.3f} D(G)={rec.d_fake:.3f}",
                file=sys.stderr,
            )

    train(
        args.corpus,
        config,
        checkpoint_dir=args.out,
        checkpoint_every=args.checkpoint_every,
        resume_from=args.resume,
        callback=progress,
    )
    run.stamp_dir(args.out)
    return EXIT_OK


def _read_slice(args) -> Slice2D:
    if args.slice_from is not None:
        return central_slice(volume_io_load(args.slice_from))
    vol = volume_io_load(args.slice)
    if vol.dims[2] != 1:
        raise ValueError(f"slice file must have nz = 1, got dims {vol.dims}")
    return Slice2D(vol.data[:, :, 0])


def cmd_generate(args, run: Run) -> int:
    model = load_checkpoint(args.checkpoint)
    s = _read_slice(args)
    result = synthesize(model, s, args.count, args.seed)
    out = Path(args.out)
    for i, vol in enumerate(result.volumes):
        run.save_volume(vol, out / f"sample_{i:03d}")
    run.write(out / "report.json", _dump(result.report()))
    print(_dump({"count": args.count, "mean_mismatch_fraction": result.report()["mean_mismatch_fraction"]}), end="")
    return EXIT_OK


def population(directory, samples: int, size: int | None, phase: Phase, seed):
    """Morphology reports of ``samples`` random cubes cycling over the volumes in a directory."""
    stems = list_volumes(directory)
    if not stems:
        raise FileNotFoundError(f"no PGV1 volumes in {directory}")
    volumes = [volume_io_load(s) for s in stems]
    rng = np.random.default_rng(seed)
    reports = []
    for i in range(samples):
        vol = volumes[i % len(volumes)]
        edge = min(vol.dims) if size is None else size
        origin = random_origins(vol.dims, edge, 1, rng)[0]
        reports.append(analyze(extract_subvolume(vol, origin, edge), phase))
    return reports


def cmd_compare(args, run: Run) -> int:
    phase = _phase(args.phase)
    real = population(args.real, args.samples, args.size, phase, args.seed)
    synth = population(args.synth, args.samples, args.size, phase, args.seed)
    report = compare_populations(real, synth)
    out = Path(args.out)
    run.write(out / "comparison.json", report.to_json())
    for metric in report.metrics:
        run.write(out / f"boxplot_{metric}.csv", report.metric_csv(metric))
    run.write(out / "real_samples.csv", reports_to_csv(real))
    run.write(out / "synthetic_samples.csv", reports_to_csv(synth))
    summary = {m: c.relative_median_difference for m, c in report.metrics.items()}
    print(_dump({"relative_median_difference": summary}), end="")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poregan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write procedural porous volumes")
    p.add_argument("--kind", choices=("gaussian", "bernoulli"), default="gaussian")
    p.add_argument("--size", type=_positive, required=True)
    p.add_argument("--correlation-length", type=float, default=2.0)
    p.add_argument("--porosity", type=float, default=0.3)
    p.add_argument("--count", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output stem (no extension)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("analyze", help="porosity and Minkowski functionals")
    p.add_argument("volume")
    p.add_argument("--phase", choices=("solid", "void"), default="solid")
    p.add_argument("--out", required=True, help="output stem; writes .json and .csv")
    p.set_defaults(func=cmd_analyze, seed=None)

    p = sub.add_parser("tpc", help="two-point correlation curve")
    p.add_argument("volume")
    p.add_argument("--phase", choices=("solid", "void"), default="void")
    p.add_argument("--max-r", type=_positive, default=20)
    p.add_argument("--estimator", choices=("exhaustive", "monte-carlo"), default="exhaustive")
    p.add_argument("--pairs", type=_positive, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tpc)

    p = sub.add_parser("rev", help="representative elementary volume from porosity")
    p.add_argument("volume")
    p.add_argument("--start-size", type=_positive, default=None)
    p.add_argument("--step", type=_positive, default=10)
    p.add_argument("--min-size", type=int, default=8)
    p.add_argument("--samples", type=_positive, default=20)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output stem; writes .csv and .json")
    p.set_defaults(func=cmd_rev)

    p = sub.add_parser("train", help="train the slice-conditioned GAN")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True, help="directory of PGV1 volumes")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--resume", default=None, help="checkpoint directory to resume from")
    p.add_argument("--verbose", type=int, default=0, help="print progress every N iterations")
    p.set_defaults(func=cmd_train, seed=None)

    p = sub.add_parser("generate", help="synthesize volumes around a 2D slice")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--slice", help="PGV1 file with nz = 1")
    group.add_argument("--slice-from", help="PGV1 volume whose central slice conditions generation")
    p.add_argument("--count", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("compare", help="box-plot comparison of two volume populations")
    p.add_argument("real")
    p.add_argument("synth")
    p.add_argument("--samples", type=_positive, default=300)
    p.add_argument("--size", type=_positive, default=None)
    p.add_argument("--phase", choices=("solid", "void"), default="solid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(_dump(resolved), end="")
    run = Run(argv, args.seed)
    try:
        return args.func(args, run)
    except ConfigError as exc:
        print(f"poregan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, VolumeFormatError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"poregan: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, IndexError, KeyError) as exc:
        print(f"poregan: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
