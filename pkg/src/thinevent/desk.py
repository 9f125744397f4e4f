"""Committed desk-scale benchmark: seed splits, training budgets and the runner.

The test split is frozen by ``data/desk_test.jsonl``: one scene spec per line
plus SHA-256 digests of the generated event stream and mask, so any drift in
the generator is caught before scoring.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import RejectedInvariant
from .evalkit import PipelineConfig, Sample, prepare, run_eval
from .events import encode_binary
from .hough import tune_hough
from .lunet import LUnetModel, TrainOptions, init_model, train
from .synth import SceneSpec, generate_sample, random_scene

SCENE_SIZE = 128
TRAIN_SEEDS = range(0, 200)
DEV_SEEDS = range(200, 230)
TEST_SEEDS = range(10_000, 10_060)

TRAIN_OPTIONS = TrainOptions()
# Memorising a single full frame: no crops or augmentation, one sample per step.
OVERFIT_OPTIONS = TrainOptions(epochs=150, lr=0.02, batch_size=1, crop=None, augment=False)


def scene_specs(seeds, size: int = SCENE_SIZE) -> list[SceneSpec]:
    return [random_scene(int(s), size=size) for s in seeds]


def samples_from_specs(specs) -> list[Sample]:
    out = []
    for spec in specs:
        s = generate_sample(spec)
        out.append(Sample(f"seed_{spec.seed}", s.recording, s.gt_mask, s.t_ref))
    return out


def sample_digests(sample: Sample) -> dict:
    return {
        "events_sha256": hashlib.sha256(encode_binary(sample.recording)).hexdigest(),
        "mask_sha256": hashlib.sha256(np.ascontiguousarray(sample.mask, dtype=np.uint8).tobytes()).hexdigest(),
    }


def write_frozen_split(specs, path) -> None:
    with open(path, "w") as fh:
        for spec, sample in zip(specs, samples_from_specs(specs)):
            entry = {"name": sample.name, "t_ref_us": sample.t_ref, "spec": spec.to_dict(), **sample_digests(sample)}
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def frozen_test_manifest() -> Path:
    return Path(str(resources.files("thinevent") / "data" / "desk_test.jsonl"))


def load_frozen_split(path=None) -> list[Sample]:
    """Regenerate the committed split and check it against the stored digests."""
    path = frozen_test_manifest() if path is None else Path(path)
    out = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        (sample,) = samples_from_specs([SceneSpec.from_dict(entry["spec"])])
        got = sample_digests(sample)
        for key, value in got.items():
            if entry[key] != value:
                raise RejectedInvariant(f"{entry['name']}: regenerated {key} differs from the frozen split")
        if sample.t_ref != entry["t_ref_us"]:
            raise RejectedInvariant(f"{entry['name']}: t_ref differs from the frozen split")
        out.append(sample)
    return out


def train_desk_model(
    opts: TrainOptions = TRAIN_OPTIONS,
    config: PipelineConfig = PipelineConfig(),
    seeds=TRAIN_SEEDS,
    log=None,
) -> tuple[LUnetModel, list[dict]]:
    data = [(prepare(s.recording, s.t_ref, config), s.mask) for s in samples_from_specs(scene_specs(seeds))]
    return train(init_model(), data, opts, log=log)


def run_desk_benchmark(
    opts: TrainOptions = TRAIN_OPTIONS,
    config: PipelineConfig = PipelineConfig(),
    model: LUnetModel | None = None,
    log=None,
) -> dict:
    """Train LUnet (unless ``model`` is given), tune Hough on the dev seeds and
    score both on the frozen test split."""
    timings = {}
    t0 = time.perf_counter()
    history = []
    if model is None:
        model, history = train_desk_model(opts, config, log=log)
    timings["train_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    dev = [(prepare(s.recording, s.t_ref, config), s.mask) for s in samples_from_specs(scene_specs(DEV_SEEDS))]
    hough_params = tune_hough(dev)
    timings["tune_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    test = load_frozen_split()
    inputs = [prepare(s.recording, s.t_ref, config) for s in test]
    lunet = run_eval("lunet", test, config, model=model, inputs=inputs)
    hough = run_eval("hough", test, config, hough_params=hough_params, inputs=inputs)
    timings["eval_s"] = time.perf_counter() - t0
    return {
        "model": model,
        "history": history,
        "hough_params": hough_params,
        "reports": [lunet, hough],
        "timings": timings,
        "train_options": asdict(opts),
    }
