"""Command-line entry point: synth -> preprocess -> train -> generate -> evaluate -> bench.

Every subcommand accepts ``--seed`` and writes a JSON echo of its effective
configuration next to its primary output.  Failures exit nonzero with a
single ``error[<category>]: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from lagan import __version__
from lagan.data import (
    DatasetFormatError,
    SyntheticConfig,
    SyntheticConfigError,
    read_events,
    read_images,
    synth_events,
    synth_mixed,
    write_events,
    write_images,
)
from lagan.evaluate import (
    average_image,
    confusion_matrix,
    conditional_response_map,
    minimax_score,
    pixel_output_correlation,
    write_pgm,
)
from lagan.jet import BACKGROUND, GENERATED, LABEL_NAMES, REAL, SIGNAL, ImageSet
from lagan.model import LaganConfig, discriminate, generate, sample_latent
from lagan.nn.checkpoint import CheckpointFormatError
from lagan.observables import observable_table, pixel_intensity_histogram
from lagan.preprocess import PreprocessConfig, preprocess_events
from lagan.train import TrainConfig, TrainingDivergedError, load_params, throughput_bench, train

OUT_DIR_ENV = "LAGAN_OUT_DIR"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5
EXIT_DIVERGED = 6

log = logging.getLogger("lagan")

CLASS_CHOICES = ("signal", "background", "mixed")
ROTATION_FLAGS = {"constituent": "constituent", "cubic": "image_cubic", "none": "none"}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------------
# helpers


def _default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "."))


def _resolve(path: str | None, default_name: str) -> Path:
    p = Path(path) if path else _default_out_dir() / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _echo_config(target: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    cfg.update(extra or {})
    dest = target / "config.json" if target.is_dir() else target.with_name(target.name + ".config.json")
    _atomic_text(dest, json.dumps(cfg, indent=2, sort_keys=True, default=str) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _atomic_text(path, buf.getvalue())


def _classes_for(kind: str, count: int) -> np.ndarray:
    if kind == "signal":
        return np.full(count, SIGNAL)
    if kind == "background":
        return np.full(count, BACKGROUND)
    return np.where(np.arange(count) % 2 == 0, SIGNAL, BACKGROUND)


def _fmt(x: float) -> str:
    return repr(float(x))


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = _resolve(args.out, "events.jev")
    sig_kw = {"resonance_mass": args.mass} if args.mass is not None else {}
    if args.cls == "mixed":
        events = synth_mixed(args.count, args.seed, SyntheticConfig.signal(seed=args.seed, **sig_kw))
        digest = SyntheticConfig.signal(**sig_kw).digest() + "+" + SyntheticConfig.background().digest()
    else:
        cfg = SyntheticConfig.signal(seed=args.seed, **sig_kw) if args.cls == "signal" else SyntheticConfig.background(seed=args.seed)
        events = synth_events(cfg, args.count)
        digest = cfg.digest()
    write_events(out, events, {"generator_config": digest, "seed": args.seed})
    _echo_config(out, args)
    log.info("wrote %d events to %s", len(events), out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    events = read_events(args.events)
    cfg = PreprocessConfig(ROTATION_FLAGS[args.rotation], args.renorm, args.truncate)
    images = preprocess_events(events, cfg)
    out = _resolve(args.out, "images.jim")
    write_images(out, images, {"source": Path(args.events).name})
    _echo_config(out, args)
    log.info("wrote %d images to %s", len(images), out)
    return EXIT_OK


def cmd_train(args) -> int:
    data = read_images(args.data)
    data = data.subset(data.origins == REAL)
    out = Path(args.out) if args.out else _default_out_dir() / "train"
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(batch_size=args.batch, epochs=args.epochs, learning_rate=args.lr, seed=args.seed)
    overrides = json.loads(Path(args.model_config).read_text()) if args.model_config else {}
    if not isinstance(overrides, dict):
        raise ValueError("--model-config must hold a JSON object of model settings")
    overrides.setdefault("local", not args.dcgan)
    try:
        model = LaganConfig.from_dict({**LaganConfig().to_dict(), **overrides})
    except TypeError as exc:
        raise ValueError(f"bad model setting: {exc}") from None
    callback = None
    if args.score_per_class > 0:
        from lagan.evaluate import epoch_scorer

        callback = epoch_scorer(data, args.score_per_class, seed=args.seed)
    _echo_config(out, args, {"train_config": vars(config), "model_config": model.to_dict()})
    result = train(config, data.pixels, data.labels, out, model, epoch_callback=callback)
    summary = {"checkpoints": [p.name for p in result.checkpoints], "best_epoch": result.best_epoch}
    _atomic_text(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    log.info("trained %d epochs; checkpoints in %s", config.epochs, out)
    return EXIT_OK


def cmd_generate(args) -> int:
    params = load_params(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    classes = _classes_for(args.cls, args.count)
    z = sample_latent(rng, args.count, params.config.latent_dim)
    chunks = [generate(params, z[k : k + args.batch], classes[k : k + args.batch])[..., 0] for k in range(0, args.count, args.batch)]
    pixels = np.concatenate(chunks) if chunks else np.zeros((0, 25, 25))
    images = ImageSet(pixels, classes, np.full(args.count, GENERATED))
    out = _resolve(args.out, "generated.jim")
    write_images(out, images, {"checkpoint": Path(args.checkpoint).name, "seed": args.seed})
    _echo_config(out, args)
    log.info("wrote %d generated images to %s", args.count, out)
    return EXIT_OK


OBS_HEADER = ("id", "label", "origin", "pt", "mass", "tau1", "tau2", "tau21")


def _observable_rows(images: ImageSet, table):
    return [
        (k, LABEL_NAMES[int(images.labels[k])], "generated" if images.origins[k] == GENERATED else "real",
         _fmt(table.pt[k]), _fmt(table.mass[k]), _fmt(table.tau1[k]), _fmt(table.tau2[k]), _fmt(table.tau21[k]))
        for k in range(len(images))
    ]


def cmd_observables(args) -> int:
    images = read_images(args.data)
    table = observable_table(images)
    out = _resolve(args.out, "observables.csv")
    _write_csv(out, OBS_HEADER, _observable_rows(images, table))
    _echo_config(out, args, {"clamped_mass": table.clamped_mass})
    return EXIT_OK


def _histogram_rows(name, values_by_series: dict, edges):
    rows = []
    for series, values in values_by_series.items():
        counts, _ = np.histogram(values[np.isfinite(values)], bins=edges)
        rows.extend((name, series, _fmt(edges[k]), _fmt(edges[k + 1]), int(c)) for k, c in enumerate(counts))
    return rows


def cmd_evaluate(args) -> int:
    real = read_images(args.real)
    gen = read_images(args.generated)
    out = Path(args.out) if args.out else _default_out_dir() / "evaluation"
    out.mkdir(parents=True, exist_ok=True)
    rt, gt = observable_table(real), observable_table(gen)
    report = minimax_score(real, gen, real_table=rt, generated_table=gt)
    _atomic_text(out / "score.json", report.to_json() + "\n")
    _write_csv(out / "observables_real.csv", OBS_HEADER, _observable_rows(real, rt))
    _write_csv(out / "observables_generated.csv", OBS_HEADER, _observable_rows(gen, gt))

    # 1D distributions: pixel intensities, mass, pt, tau21 per (origin, class)
    hist_rows = []
    both = ImageSet.concat([real, gen])
    _, edges = pixel_intensity_histogram(both)
    for name, ds in (("real", real), ("generated", gen)):
        counts, _ = pixel_intensity_histogram(ds, bins=edges)
        hist_rows.extend(("pixel_intensity", name, _fmt(edges[k]), _fmt(edges[k + 1]), int(c)) for k, c in enumerate(counts))
    for obs, lo, hi in (("mass", 0.0, 250.0), ("pt", 150.0, 350.0), ("tau21", 0.0, 1.0)):
        e = np.linspace(lo, hi, 51)
        series = {}
        for name, ds, tab in (("real", real, rt), ("generated", gen, gt)):
            for c in (SIGNAL, BACKGROUND):
                series[f"{name}_{LABEL_NAMES[c]}"] = getattr(tab, obs)[ds.labels == c]
        hist_rows.extend(_histogram_rows(obs, series, e))
    _write_csv(out / "histograms.csv", ("observable", "series", "low", "high", "count"), hist_rows)

    # average images and their differences
    averages = {}
    for name, ds in (("real", real), ("generated", gen)):
        for c in (SIGNAL, BACKGROUND):
            sub = ds.of_class(c)
            if len(sub):
                avg = average_image(sub)
                averages[(name, c)] = avg
                write_pgm(out / f"average_{name}_{LABEL_NAMES[c]}.pgm", np.log10(avg + 1e-3))
                np.savetxt(out / f"average_{name}_{LABEL_NAMES[c]}.csv", avg, delimiter=",")
    for c in (SIGNAL, BACKGROUND):
        if ("real", c) in averages and ("generated", c) in averages:
            diff = averages[("generated", c)] - averages[("real", c)]
            np.savetxt(out / f"difference_{LABEL_NAMES[c]}.csv", diff, delimiter=",")
            lim = float(np.max(np.abs(diff))) or 1.0
            write_pgm(out / f"difference_{LABEL_NAMES[c]}.pgm", diff, -lim, lim)

    if args.checkpoint:
        params = load_params(args.checkpoint)
        p_real, p_sig = discriminate(params, both.pixels[..., None])
        cm = confusion_matrix(p_sig, both.labels)
        _write_csv(out / "confusion_matrix.csv", ("truth", "pred_background", "pred_signal"),
                   [(LABEL_NAMES[BACKGROUND], *map(_fmt, cm[0])), (LABEL_NAMES[SIGNAL], *map(_fmt, cm[1]))])
        masses = np.concatenate([rt.mass, gt.mass])
        resp, empty = conditional_response_map(masses, p_real, np.linspace(0, 250, 26), np.linspace(0, 1, 21))
        np.savetxt(out / "response_map_mass.csv", resp, delimiter=",")
        corr, _ = pixel_output_correlation(both, p_real)
        np.savetxt(out / "pixel_correlation_p_real.csv", corr, delimiter=",")
        write_pgm(out / "pixel_correlation_p_real.pgm", corr, -1.0, 1.0)
    _echo_config(out, args)
    print(f"sigma={report.sigma:.6f} " + " ".join(f"emd_{k}={v:.6f}" for k, v in report.per_class_emd.items()))
    return EXIT_OK


def cmd_bench(args) -> int:
    params = load_params(args.checkpoint)
    report = throughput_bench(params, args.batch, args.seconds, args.trials, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = _resolve(args.out, "bench.json")
        _atomic_text(out, text + "\n")
        _echo_config(out, args)
    print(text)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _non_negative(text):
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lagan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lagan {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate synthetic jet events (JEV1)")
    p.add_argument("--class", dest="cls", choices=CLASS_CHOICES, default="mixed")
    p.add_argument("--count", type=_positive(int), required=True)
    p.add_argument("--mass", type=_positive(float), default=None, help="signal resonance mass in GeV (default 80)")
    p.add_argument("--out")

    p = add("preprocess", cmd_preprocess, "turn JEV1 events into JIM1 jet images")
    p.add_argument("--events", required=True)
    p.add_argument("--rotation", choices=tuple(ROTATION_FLAGS), default="constituent")
    p.add_argument("--renorm", action="store_true", help="renormalise the pixel sum after cubic rotation")
    p.add_argument("--truncate", type=_non_negative, default=1e-3)
    p.add_argument("--out")

    p = add("train", cmd_train, "train a LAGAN on a JIM1 dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=_positive(int), default=40)
    p.add_argument("--batch", type=_positive(int), default=100)
    p.add_argument("--lr", type=_positive(float), default=2e-4)
    p.add_argument("--score-per-class", type=int, default=0,
                   help="score each epoch with this many generated images per class (0 disables)")
    p.add_argument("--dcgan", action="store_true", help="replace locally connected layers by convolutions")
    p.add_argument("--model-config", help="JSON file of architecture overrides (e.g. smaller layers)")
    p.add_argument("--out")

    p = add("generate", cmd_generate, "sample images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=_positive(int), required=True)
    p.add_argument("--class", dest="cls", choices=CLASS_CHOICES, default="mixed")
    p.add_argument("--batch", type=_positive(int), default=500)
    p.add_argument("--out")

    p = add("observables", cmd_observables, "per-image pt, mass, tau1, tau2, tau21 as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out")

    p = add("evaluate", cmd_evaluate, "score generated against real images")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--checkpoint", help="add discriminator-based diagnostics")
    p.add_argument("--out")

    p = add("bench", cmd_bench, "generation throughput in images/second")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batch", type=_positive(int), default=100)
    p.add_argument("--seconds", type=_positive(float), default=2.0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--out")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        category, code, msg = "file-not-found", EXIT_NOT_FOUND, f"{exc.filename}: no such file"
    except (DatasetFormatError, CheckpointFormatError) as exc:
        category, code, msg = "format", EXIT_FORMAT, str(exc)
    except TrainingDivergedError as exc:
        category, code, msg = "diverged", EXIT_DIVERGED, str(exc)
    except (SyntheticConfigError, ValueError) as exc:
        category, code, msg = "config", EXIT_CONFIG, str(exc)
    print(f"error[{category}]: {' '.join(msg.split())}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
