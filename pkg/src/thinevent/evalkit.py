"""Evaluation harness: preprocessing front-end, scoring, latency benchmarks, reports."""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import EmptyDataset, MissingModel
from .events import EventRecording, read_recording
from .hough import HoughParams, hough_detect
from .imageio import read_pgm
from .lunet import LUnetModel
from .metrics import binarize, dice, iou
from .preprocess import DEFAULT_TAU_US, DEFAULT_WINDOW_US, StcParams, stc_filter, surface_channels
from .synth import read_manifest


@dataclass
class PipelineConfig:
    stc: StcParams = field(default_factory=StcParams)
    use_stc: bool = True
    tau_us: float = DEFAULT_TAU_US
    window_us: int | None = DEFAULT_WINDOW_US
    polarity_mode: str = "separate"
    threshold: float = 0.5  # heatmap binarization

    def snapshot(self) -> dict:
        d = asdict(self)
        d["latency_scope"] = "inference call only; filtering and surface building excluded"
        return d


@dataclass
class Sample:
    name: str
    recording: EventRecording
    mask: np.ndarray
    t_ref: int


def load_samples(manifest: str | os.PathLike) -> list[Sample]:
    out = []
    for e in read_manifest(manifest):
        out.append(Sample(Path(e["recording"]).stem, read_recording(e["recording"]), read_pgm(e["mask"]), int(e["t_ref_us"])))
    return out


def prepare(rec: EventRecording, t_ref: int, config: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Filter (optionally) and build the ``(C, H, W)`` network input."""
    if config.use_stc:
        rec = stc_filter(rec, config.stc)
    return surface_channels(rec, t_ref, config.tau_us, config.polarity_mode, config.window_us)


def prepare_all(samples, config: PipelineConfig = PipelineConfig()) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(prepare(s.recording, s.t_ref, config), s.mask) for s in samples]


def lunet_predictor(model: LUnetModel, threshold: float = 0.5) -> Callable:
    def predict(x):
        return binarize(model.forward(x)[0], threshold)
    return predict


def hough_predictor(params: HoughParams) -> Callable:
    def predict(x):
        return hough_detect(x, params)
    return predict


@dataclass
class EvalReport:
    method: str
    rows: list[dict]
    config: dict

    @property
    def mean_iou(self) -> float:
        return float(np.mean([r["iou"] for r in self.rows]))

    @property
    def mean_dice(self) -> float:
        return float(np.mean([r["dice"] for r in self.rows]))

    @property
    def mean_infer_ms(self) -> float:
        return float(np.mean([r["infer_ms"] for r in self.rows]))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "mean_iou": self.mean_iou,
            "mean_dice": self.mean_dice,
            "mean_infer_ms": self.mean_infer_ms,
            "samples": self.rows,
            "config": self.config,
        }


def run_eval(
    method,
    samples,
    config: PipelineConfig = PipelineConfig(),
    *,
    model: LUnetModel | None = None,
    hough_params: HoughParams | None = None,
    warmup: int = 2,
    inputs=None,
) -> EvalReport:
    """Score a method on every sample.

    ``method`` is ``"lunet"``, ``"hough"``, or any callable mapping a
    ``(C, H, W)`` input to a binary mask (tagged with its ``__name__``).
    ``samples`` is a manifest path or a list of :class:`Sample`. Pre-built
    ``inputs`` (one per sample) skip the preprocessing step.
    """
    if isinstance(samples, (str, os.PathLike)):
        samples = load_samples(samples)
    if not samples:
        raise EmptyDataset("nothing to evaluate")
    snapshot = {"pipeline": config.snapshot(), "package_version": __version__}
    if method == "lunet":
        if model is None:
            raise MissingModel("lunet evaluation needs a trained model")
        predict = lunet_predictor(model, config.threshold)
        snapshot["model"] = asdict(model.config)
        tag = "LUnet"
    elif method == "hough":
        hough_params = hough_params or HoughParams()
        predict = hough_predictor(hough_params)
        snapshot["hough"] = asdict(hough_params)
        tag = "Hough"
    elif callable(method):
        predict = method
        tag = getattr(method, "__name__", "custom")
    else:
        raise ValueError(f"unknown method {method!r}")

    if inputs is None:
        inputs = [prepare(s.recording, s.t_ref, config) for s in samples]
    for _ in range(warmup):
        predict(inputs[0])
    rows = []
    for s, x in zip(samples, inputs):
        t0 = time.perf_counter()
        pred = predict(x)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append({"sample": s.name, "iou": iou(pred, s.mask), "dice": dice(pred, s.mask), "infer_ms": ms})
    return EvalReport(tag, rows, snapshot)


def threshold_sweep(
    model: LUnetModel,
    samples,
    thresholds=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    config: PipelineConfig = PipelineConfig(),
    inputs=None,
) -> list[dict]:
    """Mean IoU / Dice of the network at each binarization threshold (diagnostic only)."""
    if isinstance(samples, (str, os.PathLike)):
        samples = load_samples(samples)
    if not samples:
        raise EmptyDataset("nothing to evaluate")
    if inputs is None:
        inputs = [prepare(s.recording, s.t_ref, config) for s in samples]
    heats = [model.forward(x)[0] for x in inputs]
    out = []
    for th in thresholds:
        preds = [binarize(h, th) for h in heats]
        out.append({
            "threshold": float(th),
            "mean_iou": float(np.mean([iou(p, s.mask) for p, s in zip(preds, samples)])),
            "mean_dice": float(np.mean([dice(p, s.mask) for p, s in zip(preds, samples)])),
        })
    return out


def render_table(reports: list[EvalReport]) -> str:
    header = f"{'Method':<10}{'Mean IoU':>10}{'Mean Dice':>11}{'Mean Inference Time':>22}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{r.method:<10}{r.mean_iou:>10.4f}{r.mean_dice:>11.4f}{r.mean_infer_ms:>19.1f} ms")
    return "\n".join(lines) + "\n"


def write_reports(reports: list[EvalReport], out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2))
    (out / "report.txt").write_text(render_table(reports))


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def _stats(samples_ms: list[float]) -> dict:
    arr = np.asarray(samples_ms)
    return {
        "mean_ms": float(arr.mean()),
        "p50_ms": float(np.percentile(arr, 50)),
        "p95_ms": float(np.percentile(arr, 95)),
    }


def bench_latency(method: Callable, x, repeats: int = 20, warmup: int = 3) -> dict:
    """Wall-clock statistics of ``method(x)`` over ``repeats`` calls after ``warmup`` calls."""
    if repeats < 10 or warmup < 3:
        raise ValueError("need repeats >= 10 and warmup >= 3")
    with threadpool_limits(1):
        for _ in range(warmup):
            method(x)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            method(x)
            times.append((time.perf_counter() - t0) * 1e3)
    return {**_stats(times), "repeats": repeats, "warmup": warmup, "machine": machine_descriptor()}


def bench_pipeline(
    rec: EventRecording,
    t_ref: int,
    methods: dict[str, Callable],
    config: PipelineConfig = PipelineConfig(),
    repeats: int = 20,
    warmup: int = 3,
) -> dict:
    """Per-stage latency: STC filter, surface building, then each method's inference."""
    filtered = stc_filter(rec, config.stc) if config.use_stc else rec
    x = surface_channels(filtered, t_ref, config.tau_us, config.polarity_mode, config.window_us)
    stages = {}
    if config.use_stc:
        stages["stc_filter"] = bench_latency(lambda r: stc_filter(r, config.stc), rec, repeats, warmup)
    stages["time_surface"] = bench_latency(
        lambda r: surface_channels(r, t_ref, config.tau_us, config.polarity_mode, config.window_us),
        filtered, repeats, warmup,
    )
    for name, fn in methods.items():
        stages[f"infer:{name}"] = bench_latency(fn, x, repeats, warmup)
    for s in stages.values():
        s.pop("machine")
    return {
        "input": {"height": rec.height, "width": rec.width, "events": len(rec)},
        "stages": stages,
        "machine": machine_descriptor(),
        "threads": 1,
    }
