"""Command-line entry point: ``thinevent <command> [options]``.

Every output lands under ``--out-dir``; relative ``--out`` names are resolved
against it. ``--config`` reads defaults from a TOML or JSON file: top-level
keys apply to every command and a table named after the command overrides
them. Keys use the option names with dashes or underscores
(``tau_us = 20000`` or ``"tau-us": 20000``). Flags given on the command line
win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ThinEventError
from .events import read_recording, write_recording
from .evalkit import (
    PipelineConfig,
    bench_pipeline,
    hough_predictor,
    load_samples,
    lunet_predictor,
    prepare_all,
    render_table,
    run_eval,
    threshold_sweep,
    write_reports,
)
from .hough import HoughParams, hough_detect, tune_hough
from .imageio import read_surface, write_pfm, write_pgm, write_surface
from .lunet import LUnetConfig, LUnetModel, TrainOptions, init_model, train
from .metrics import binarize
from .preprocess import DEFAULT_TAU_US, DEFAULT_WINDOW_US, StcParams, stc_filter, surface_channels
from .synth import SceneSpec, generate_dataset, generate_sample, random_scene


def _load_config(path: str) -> dict:
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text)


def _defaults_for(config: dict, command: str) -> dict:
    out = {k: v for k, v in config.items() if not isinstance(v, dict)}
    out.update(config.get(command, {}))
    out = {k.replace("-", "_"): v for k, v in out.items()}
    if "lambda" in out:
        out["lam"] = out.pop("lambda")
    return out


# -- shared option groups -----------------------------------------------------

def _add_recording_input(p):
    p.add_argument("--input", required=True, help="event file (.skys binary or .csv)")
    p.add_argument("--format", choices=("binary", "csv"), help="default: from the file suffix")
    p.add_argument("--width", type=int, help="sensor width, needed for CSV input")
    p.add_argument("--height", type=int, help="sensor height, needed for CSV input")


def _add_stc(p):
    g = p.add_argument_group("noise filter")
    d = StcParams()
    g.add_argument("--stc-radius", type=int, default=d.radius_px)
    g.add_argument("--stc-window-us", type=int, default=d.window_us)
    g.add_argument("--stc-min-support", type=int, default=d.min_support)
    g.add_argument("--stc-bidirectional", action="store_true")


def _add_surface(p):
    g = p.add_argument_group("time surface")
    g.add_argument("--tau-us", type=float, default=DEFAULT_TAU_US)
    g.add_argument("--window-us", type=int, default=DEFAULT_WINDOW_US, help="0 disables the window")
    g.add_argument("--polarity", choices=("merged", "separate"), default="separate")


def _add_pipeline(p):
    _add_stc(p)
    _add_surface(p)
    p.add_argument("--no-stc", action="store_true", help="skip the noise filter")


def _add_hough(p, defaults: HoughParams = HoughParams()):
    g = p.add_argument_group("Hough baseline")
    g.add_argument("--rho-step", type=float, default=defaults.rho_step)
    g.add_argument("--theta-step", type=float, default=defaults.theta_step, help="radians")
    g.add_argument("--threshold", type=int, default=defaults.accumulator_threshold, help="accumulator votes")
    g.add_argument("--binarize", type=float, default=defaults.binarize_threshold)
    g.add_argument("--thickness", type=float, default=defaults.line_raster_thickness)


def _stc(a) -> StcParams:
    return StcParams(a.stc_radius, a.stc_window_us, a.stc_min_support, a.stc_bidirectional)


def _window(a):
    return a.window_us if a.window_us else None


def _pipeline(a) -> PipelineConfig:
    return PipelineConfig(
        stc=_stc(a), use_stc=not a.no_stc, tau_us=a.tau_us, window_us=_window(a), polarity_mode=a.polarity
    )


def _hough(a) -> HoughParams:
    return HoughParams(a.rho_step, a.theta_step, a.threshold, a.binarize, a.thickness)


def _out(a, name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        p = Path(a.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _read_rec(a):
    return read_recording(a.input, a.format, a.width, a.height)


# -- commands -----------------------------------------------------------------

def cmd_generate(a) -> dict:
    if a.specs:
        raw = Path(a.specs).read_text()
        items = json.loads(raw) if raw.lstrip().startswith("[") else [json.loads(l) for l in raw.splitlines() if l.strip()]
        specs = [SceneSpec.from_dict(d.get("spec", d)) for d in items]
    else:
        specs = [
            random_scene(a.seed + i, a.size, (0, a.max_clutter), (0.0, a.max_noise_rate), a.duration_us)
            for i in range(a.count)
        ]
    out = _out(a, a.name)
    generate_dataset(specs, out)
    return {"manifest": str(out / "manifest.jsonl"), "samples": len(specs)}


def cmd_filter(a) -> dict:
    rec = _read_rec(a)
    kept = stc_filter(rec, _stc(a))
    out = _out(a, a.out)
    write_recording(kept, out, a.out_format)
    return {"out": str(out), "events_in": len(rec), "events_out": len(kept)}


def cmd_surface(a) -> dict:
    rec = _read_rec(a)
    if a.stc:
        rec = stc_filter(rec, _stc(a))
    t_ref = a.t_ref_us if a.t_ref_us is not None else (int(rec.t[-1]) if len(rec) else 0)
    x = surface_channels(rec, t_ref, a.tau_us, a.polarity, _window(a))
    paths = write_surface(x, _out(a, a.out))
    return {"out": [str(p) for p in paths], "t_ref_us": t_ref}


def cmd_train(a) -> dict:
    cfg = _pipeline(a)
    samples = load_samples(a.data)
    data = prepare_all(samples, cfg)
    in_ch = data[0][0].shape[0] if data else (2 if a.polarity == "separate" else 1)
    model = init_model(LUnetConfig(in_channels=in_ch, base_channels=a.base_channels, depth=a.depth, seed=a.seed))
    opts = TrainOptions(
        epochs=a.epochs, lr=a.lr, lam=a.lam, batch_size=a.batch_size, seed=a.seed,
        crop=a.crop or None, schedule=a.schedule,
    )
    log_path = _out(a, a.log)
    with open(log_path, "w") as fh:
        def log(entry):
            fh.write(json.dumps(entry) + "\n")
            fh.flush()
            if not a.quiet:
                print(f"epoch {entry['epoch']:3d}  total {entry['total']:.4f}  dice {entry['dice']:.4f}  reg {entry['reg']:.4f}", file=sys.stderr)

        model, _ = train(model, data, opts, log)
    out = _out(a, a.out)
    model.save(out)
    return {"model": str(out), "log": str(log_path), "samples": len(data), "options": asdict(opts)}


def cmd_infer(a) -> dict:
    model = LUnetModel.load(a.model)
    x = read_surface(a.surface)
    heat = model.forward(x)[0]
    out = _out(a, a.out)
    write_pfm(heat, out)
    res = {"out": str(out)}
    if a.mask_out:
        mpath = _out(a, a.mask_out)
        write_pgm(binarize(heat, a.threshold), mpath)
        res["mask"] = str(mpath)
    return res


def cmd_baseline_hough(a) -> dict:
    mask = hough_detect(read_surface(a.surface), _hough(a))
    out = _out(a, a.out)
    write_pgm(mask, out)
    return {"out": str(out), "pixels": int(mask.sum())}


def cmd_eval(a) -> dict:
    cfg = _pipeline(a)
    cfg.threshold = a.heat_threshold
    samples = load_samples(a.data)
    inputs = [x for x, _ in prepare_all(samples, cfg)]
    methods = ["lunet", "hough"] if a.method == "both" else [a.method]
    reports = []
    extra = {}
    for m in methods:
        if m == "lunet":
            model = LUnetModel.load(a.model) if a.model else None
            reports.append(run_eval("lunet", samples, cfg, model=model, inputs=inputs))
        else:
            hp = _hough(a)
            if a.tune_data:
                dev = prepare_all(load_samples(a.tune_data), cfg)
                hp = tune_hough(dev, base=hp)
                extra["tuned_hough"] = asdict(hp)
            reports.append(run_eval("hough", samples, cfg, hough_params=hp, inputs=inputs))
    out = Path(a.out_dir)
    write_reports(reports, out)
    print(render_table(reports), end="")
    if a.sweep:
        if not a.model:
            raise ValueError("--sweep needs --model")
        thresholds = [float(v) for v in a.sweep.split(",")]
        rows = threshold_sweep(LUnetModel.load(a.model), samples, thresholds, cfg, inputs)
        (out / "sweep.json").write_text(json.dumps(rows, indent=2))
        for r in rows:
            print(f"threshold {r['threshold']:.2f}  IoU {r['mean_iou']:.4f}  Dice {r['mean_dice']:.4f}")
        extra["sweep"] = str(out / "sweep.json")
    return {"report": str(out / "report.json"), **extra}


def cmd_bench(a) -> dict:
    cfg = _pipeline(a)
    sample = generate_sample(random_scene(a.seed, a.size))
    methods = {}
    if a.model:
        model = LUnetModel.load(a.model)
    else:
        in_ch = 2 if a.polarity == "separate" else 1
        model = init_model(LUnetConfig(in_channels=in_ch, seed=a.seed))
    methods["lunet"] = lunet_predictor(model)
    methods["hough"] = hough_predictor(_hough(a))
    res = bench_pipeline(sample.recording, sample.t_ref, methods, cfg, a.repeats, a.warmup)
    res["model_source"] = a.model or "untrained (latency only)"
    out = _out(a, a.out)
    out.write_text(json.dumps(res, indent=2))
    for name, st in res["stages"].items():
        print(f"{name:<16} mean {st['mean_ms']:8.2f} ms  p50 {st['p50_ms']:8.2f} ms  p95 {st['p95_ms']:8.2f} ms")
    return {"out": str(out)}


def cmd_desk(a) -> dict:
    from dataclasses import replace

    from .desk import TRAIN_OPTIONS, run_desk_benchmark

    opts = replace(TRAIN_OPTIONS, epochs=a.epochs) if a.epochs else TRAIN_OPTIONS
    model = LUnetModel.load(a.model) if a.model else None
    out = Path(a.out_dir)
    with open(out / "train_log.jsonl", "w") as fh:
        def log(entry):
            fh.write(json.dumps(entry) + "\n")
            fh.flush()
            if not a.quiet:
                print(f"epoch {entry['epoch']:3d}  total {entry['total']:.4f}  dice {entry['dice']:.4f}", file=sys.stderr)

        res = run_desk_benchmark(opts, model=model, log=log)
    if model is None:
        res["model"].save(out / "model.lunw")
    write_reports(res["reports"], out)
    print(render_table(res["reports"]), end="")
    lunet, hough = res["reports"]
    return {
        "report": str(out / "report.json"),
        "lunet_dice": lunet.mean_dice,
        "hough_dice": hough.mean_dice,
        "tuned_hough": asdict(res["hough_params"]),
        "timings": res["timings"],
    }


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON file with option defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=".", help="directory for all outputs")

    parser = argparse.ArgumentParser(prog="thinevent", description="Thin-line detection in event streams.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic dataset (recordings, masks, manifest)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--max-clutter", type=int, default=3)
    p.add_argument("--max-noise-rate", type=float, default=3.0, help="events / pixel / s")
    p.add_argument("--duration-us", type=int, default=33_000)
    p.add_argument("--specs", help="JSON list or JSON-lines file of scene specs (overrides random scenes)")
    p.add_argument("--name", default="dataset", help="subdirectory of --out-dir")

    p = add("filter", cmd_filter, "remove uncorrelated noise events")
    _add_recording_input(p)
    _add_stc(p)
    p.add_argument("--out", default="filtered.skys")
    p.add_argument("--out-format", choices=("binary", "csv"))

    p = add("surface", cmd_surface, "build a time surface from an event file")
    _add_recording_input(p)
    _add_surface(p)
    _add_stc(p)
    p.add_argument("--t-ref-us", type=int, help="default: timestamp of the last event")
    p.add_argument("--stc", action="store_true", help="filter noise before building the surface")
    p.add_argument("--out", default="surface.pfm")

    p = add("train", cmd_train, "train the segmentation network")
    p.add_argument("--data", required=True, help="dataset manifest")
    d = TrainOptions()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--crop", type=int, default=d.crop, help="0 trains on full frames")
    p.add_argument("--schedule", choices=("cosine", "constant"), default=d.schedule)
    p.add_argument("--base-channels", type=int, default=LUnetConfig().base_channels)
    p.add_argument("--depth", type=int, default=LUnetConfig().depth)
    p.add_argument("--out", default="model.lunw")
    p.add_argument("--log", default="train_log.jsonl")
    p.add_argument("--quiet", action="store_true")
    _add_pipeline(p)

    p = add("infer", cmd_infer, "run the network on a surface file")
    p.add_argument("--model", required=True)
    p.add_argument("--surface", required=True)
    p.add_argument("--out", default="heat.pfm")
    p.add_argument("--mask-out", help="also write the binarized mask as PGM")
    p.add_argument("--threshold", type=float, default=0.5)

    p = add("baseline-hough", cmd_baseline_hough, "detect lines in a surface file with the Hough transform")
    p.add_argument("--surface", required=True)
    p.add_argument("--out", default="mask.pgm")
    _add_hough(p)

    p = add("eval", cmd_eval, "score methods on a dataset and write report.json / report.txt")
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--method", choices=("lunet", "hough", "both"), default="both")
    p.add_argument("--model")
    p.add_argument("--tune-data", help="dev manifest for the Hough parameter grid search")
    p.add_argument("--heat-threshold", type=float, default=0.5)
    p.add_argument("--sweep", help="comma-separated heatmap thresholds to report for the network, e.g. 0.3,0.5,0.7")
    _add_pipeline(p)
    _add_hough(p)

    p = add("bench", cmd_bench, "per-stage latency on a synthetic recording")
    p.add_argument("--model", help="checkpoint (default: freshly initialised network)")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out", default="bench.json")
    _add_pipeline(p)
    _add_hough(p)

    p = add("desk", cmd_desk, "train on the committed seed split, tune Hough and score both on the frozen test split")
    p.add_argument("--model", help="score this checkpoint instead of training")
    p.add_argument("--epochs", type=int, help="override the committed epoch budget")
    p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        defaults = _defaults_for(_load_config(args.config), args.command)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            parser.error(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        result = args.func(args)
    except (ThinEventError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, default=_jsonable))
    return 0


def _jsonable(o):
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return str(o)


if __name__ == "__main__":
    raise SystemExit(main())
