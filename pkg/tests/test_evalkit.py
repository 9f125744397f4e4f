import json

import numpy as np
import pytest

from thinevent.errors import EmptyDataset, MissingModel
from thinevent.evalkit import (
    EvalReport,
    PipelineConfig,
    Sample,
    bench_latency,
    bench_pipeline,
    hough_predictor,
    load_samples,
    lunet_predictor,
    prepare,
    render_table,
    run_eval,
    threshold_sweep,
    write_reports,
)
from thinevent.hough import HoughParams
from thinevent.lunet import init_model
from thinevent.metrics import dice, iou
from thinevent.synth import generate_dataset, generate_sample, random_scene


@pytest.fixture(scope="module")
def samples():
    out = []
    for seed in range(4):
        s = generate_sample(random_scene(seed, size=48))
        out.append(Sample(f"s{seed}", s.recording, s.gt_mask, s.t_ref))
    return out


def test_oracle_method_scores_one(samples):
    masks = iter([s.mask for s in samples])

    def oracle(x):
        return next(masks)

    rep = run_eval(oracle, samples, warmup=0)
    assert rep.mean_iou == rep.mean_dice == 1.0
    assert rep.method == "oracle"


def test_empty_method_scores_zero(samples):
    assert all(s.mask.any() for s in samples)

    def empty(x):
        return np.zeros(x.shape[1:], dtype=np.uint8)

    rep = run_eval(empty, samples)
    assert rep.mean_iou == rep.mean_dice == 0.0


def test_aggregates_are_row_means(samples):
    rep = run_eval("hough", samples, hough_params=HoughParams(accumulator_threshold=15, binarize_threshold=0.9))
    rows = rep.rows
    assert len(rows) == len(samples)
    for key, agg in (("iou", rep.mean_iou), ("dice", rep.mean_dice), ("infer_ms", rep.mean_infer_ms)):
        assert agg == pytest.approx(sum(r[key] for r in rows) / len(rows), rel=1e-12, abs=1e-15)
    for r in rows:
        assert 0 <= r["iou"] <= r["dice"] <= 1
        assert abs(r["dice"] - 2 * r["iou"] / (1 + r["iou"])) <= 1e-12
        assert r["infer_ms"] >= 0


def test_lunet_eval_deterministic(samples):
    model = init_model()
    a = run_eval("lunet", samples, model=model)
    b = run_eval("lunet", samples, model=model)
    strip = lambda rep: [{k: v for k, v in r.items() if k != "infer_ms"} for r in rep.rows]
    assert strip(a) == strip(b)
    assert a.method == "LUnet"
    assert a.config["model"]["base_channels"] == 8
    assert "latency_scope" in a.config["pipeline"]


def test_predictors_match_direct_scoring(samples):
    s = samples[0]
    x = prepare(s.recording, s.t_ref)
    hp = HoughParams(accumulator_threshold=15, binarize_threshold=0.9)
    rep = run_eval("hough", [s], hough_params=hp)
    pred = hough_predictor(hp)(x)
    assert rep.rows[0]["iou"] == iou(pred, s.mask)
    assert rep.rows[0]["dice"] == dice(pred, s.mask)
    heat = lunet_predictor(init_model())(x)
    assert heat.shape == s.mask.shape and set(np.unique(heat)) <= {0, 1}


def test_prebuilt_inputs_skip_preprocessing(samples):
    inputs = [prepare(s.recording, s.t_ref) for s in samples]
    hp = HoughParams(accumulator_threshold=15, binarize_threshold=0.9)
    a = run_eval("hough", samples, hough_params=hp)
    b = run_eval("hough", samples, hough_params=hp, inputs=inputs)
    assert [r["dice"] for r in a.rows] == [r["dice"] for r in b.rows]


def test_errors(samples):
    with pytest.raises(MissingModel):
        run_eval("lunet", samples)
    with pytest.raises(EmptyDataset):
        run_eval("hough", [])
    with pytest.raises(ValueError):
        run_eval("nonsense", samples)


def test_manifest_round_trip_and_reports(tmp_path):
    specs = [random_scene(s, size=32) for s in range(2)]
    generate_dataset(specs, tmp_path / "data")
    loaded = load_samples(tmp_path / "data" / "manifest.jsonl")
    assert [s.name for s in loaded] == ["sample_0000", "sample_0001"]
    for s, spec in zip(loaded, specs):
        ref = generate_sample(spec)
        assert s.recording == ref.recording
        assert np.array_equal(s.mask, ref.gt_mask)
    rep = run_eval("hough", tmp_path / "data" / "manifest.jsonl", hough_params=HoughParams())
    rep2 = run_eval(lambda x: np.zeros(x.shape[1:]), loaded)
    write_reports([rep, rep2], tmp_path / "out")
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [r["method"] for r in data["reports"]] == ["Hough", "<lambda>"]
    assert data["reports"][0]["mean_dice"] == rep.mean_dice
    txt = (tmp_path / "out" / "report.txt").read_text()
    for col in ("Method", "Mean IoU", "Mean Dice", "Mean Inference Time"):
        assert col in txt


def test_render_table_columns():
    rep = EvalReport("X", [{"sample": "a", "iou": 0.5, "dice": 2 / 3, "infer_ms": 1.25}], {})
    lines = render_table([rep]).splitlines()
    assert lines[0].split() == ["Method", "Mean", "IoU", "Mean", "Dice", "Mean", "Inference", "Time"]
    assert lines[2].split() == ["X", "0.5000", "0.6667", "1.2", "ms"]


def test_bench_latency_noop():
    res = bench_latency(lambda x: None, None, repeats=10, warmup=3)
    assert res["repeats"] == 10 and res["warmup"] == 3
    assert 0 <= res["p50_ms"] <= res["p95_ms"]
    assert res["mean_ms"] < 1.0
    assert "platform" in res["machine"] and "cpu_count" in res["machine"]


def test_bench_latency_excludes_warmup():
    calls = []

    def slow_first(x):
        calls.append(1)
        if len(calls) <= 3:
            import time
            time.sleep(0.05)

    res = bench_latency(slow_first, None, repeats=10, warmup=3)
    assert len(calls) == 13
    assert res["p95_ms"] < 40


def test_bench_latency_preconditions():
    with pytest.raises(ValueError):
        bench_latency(lambda x: None, None, repeats=9)
    with pytest.raises(ValueError):
        bench_latency(lambda x: None, None, warmup=2)


def test_bench_pipeline_stages(samples):
    s = samples[0]
    model = init_model()
    res = bench_pipeline(
        s.recording, s.t_ref,
        {"lunet": lunet_predictor(model), "hough": hough_predictor(HoughParams())},
        repeats=10, warmup=3,
    )
    assert set(res["stages"]) == {"stc_filter", "time_surface", "infer:lunet", "infer:hough"}
    for st in res["stages"].values():
        assert 0 <= st["p50_ms"] <= st["p95_ms"]
    assert res["input"]["width"] == 48
    assert res["machine"]["python"]
    cfg = PipelineConfig(use_stc=False)
    res2 = bench_pipeline(s.recording, s.t_ref, {}, cfg, repeats=10, warmup=3)
    assert set(res2["stages"]) == {"time_surface"}


def test_threshold_sweep_matches_eval(samples):
    model = init_model()
    rows = threshold_sweep(model, samples, (0.3, 0.5, 0.7))
    assert [r["threshold"] for r in rows] == [0.3, 0.5, 0.7]
    rep = run_eval("lunet", samples, model=model)
    assert rows[1]["mean_dice"] == pytest.approx(rep.mean_dice, abs=1e-12)
    assert rows[1]["mean_iou"] == pytest.approx(rep.mean_iou, abs=1e-12)
    with pytest.raises(EmptyDataset):
        threshold_sweep(model, [])
