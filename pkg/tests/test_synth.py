import json

import numpy as np
import pytest

from thinevent.errors import DegenerateSpec
from thinevent.events import read_recording
from thinevent.imageio import read_pgm
from thinevent.synth import (
    CLUTTER,
    LINE,
    NOISE,
    ClutterEdge,
    SceneSpec,
    file_digest,
    generate_dataset,
    generate_sample,
    random_scene,
    rasterize_segments,
    read_manifest,
)

from oracles import brute_force_partner_fraction, perimeter_4conn


def clean_line_spec(v=500.0, thickness=1.0, jitter=0.0, seed=3):
    return SceneSpec(
        64, 64,
        line_segments=[((-10.0, 32.0), (80.0, 32.0))],
        line_thickness_px=thickness,
        velocity=(0.0, v),
        duration_us=40_000,
        contrast_threshold_jitter=jitter,
        seed=seed,
    )


def test_empty_scene():
    s = generate_sample(SceneSpec(16, 16))
    assert len(s.recording) == 0
    assert not s.gt_mask.any()


def test_dual_polarity_partners():
    spec = clean_line_spec(v=500.0, jitter=30.0)
    s = generate_sample(spec)
    assert len(s.recording) > 0
    max_dt = 2 * spec.line_thickness_px / 500.0 * 1e6
    assert brute_force_partner_fraction(s.recording, 2, max_dt) >= 0.95


def test_leading_band_is_positive():
    rec = generate_sample(clean_line_spec(v=1000.0)).recording
    order = np.lexsort((rec.t, rec.y, rec.x))
    pix = rec.x[order] * 1000 + rec.y[order]
    pol = rec.p[order]
    starts = np.flatnonzero(np.r_[True, pix[1:] != pix[:-1]])
    full = [i for i, j in zip(starts, np.r_[starts[1:], len(pix)]) if j - i == 2]
    assert len(full) > 100
    assert all(pol[i] == 1 and pol[i + 1] == -1 for i in full)


def test_band_separation_in_time():
    spec = clean_line_spec(v=250.0, thickness=2.0)
    rec = generate_sample(spec).recording
    sel = (rec.x == 10) & (rec.y == 30)
    t = rec.t[sel]
    assert rec.p[sel].tolist() == [1, -1]
    assert t[1] - t[0] == pytest.approx(2.0 / 250.0 * 1e6, abs=1)


def test_noise_count_is_poisson():
    r, w, h, d = 20.0, 32, 32, 100_000
    s = generate_sample(SceneSpec(w, h, noise_rate=r, duration_us=d, seed=11))
    mean = r * w * h * d * 1e-6
    assert abs(len(s.recording) - mean) <= 5 * np.sqrt(mean)
    assert np.all(s.origins == NOISE)
    assert 0.4 < np.mean(s.recording.p > 0) < 0.6


def test_determinism_and_ordering():
    spec = random_scene(5)
    a, b = generate_sample(spec), generate_sample(spec)
    assert a.recording == b.recording
    assert np.array_equal(a.gt_mask, b.gt_mask)
    assert np.all(np.diff(a.recording.t) >= 0)
    assert set(np.unique(a.origins)) <= {NOISE, LINE, CLUTTER}


def test_mask_ignores_clutter():
    spec = clean_line_spec()
    spec.clutter_edges = [ClutterEdge([(5.0, 5.0), (60.0, 10.0)], 6.0, (300.0, 400.0))]
    s = generate_sample(spec)
    plain = generate_sample(clean_line_spec())
    assert np.array_equal(s.gt_mask, plain.gt_mask)
    assert np.any(s.origins == CLUTTER)
    clutter_p = s.recording.p[s.origins == CLUTTER]
    assert (clutter_p > 0).any() and (clutter_p < 0).any()


@pytest.mark.parametrize("seed", range(6))
def test_mask_is_thin(seed):
    spec = random_scene(seed)
    mask = generate_sample(spec).gt_mask
    assert mask.any()
    assert mask.sum() / perimeter_4conn(mask) <= 1.0


@pytest.mark.parametrize("y0", [32.0, 32.3, 32.5, 32.9])
@pytest.mark.parametrize("thickness", [1.0, 1.5, 2.0])
def test_mask_cross_section(y0, thickness):
    mask = rasterize_segments([((-5.0, y0), (70.0, y0))], thickness, 64, 64)
    widths = mask.sum(axis=0)
    assert widths.max() <= np.ceil(thickness) + 1
    # brute-force distance rule for a horizontal segment
    expect = (np.abs(np.arange(64) - y0) < thickness / 2 + 0.5).astype(int)
    assert np.array_equal(mask[:, 20], expect)


def test_degenerate_specs():
    with pytest.raises(DegenerateSpec):
        generate_sample(SceneSpec(8, 8, line_segments=[((1.0, 1.0), (1.0, 1.0))]))
    with pytest.raises(DegenerateSpec):
        generate_sample(SceneSpec(8, 8, line_segments=[((0.0, 1.0), (5.0, 1.0))], velocity=(0.0, 0.0)))
    with pytest.raises(DegenerateSpec):
        generate_sample(SceneSpec(8, 8, line_thickness_px=0.0))
    with pytest.raises(DegenerateSpec):
        generate_sample(SceneSpec(8, 8, noise_rate=-1.0))
    with pytest.raises(DegenerateSpec):
        generate_sample(SceneSpec(8, 8, duration_us=0))


def test_spec_dict_round_trip():
    spec = random_scene(9)
    again = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert again == spec


def test_generate_dataset(tmp_path):
    specs = [random_scene(i, size=32) for i in range(3)]
    manifest = generate_dataset(specs, tmp_path / "a")
    assert len(manifest) == 3
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len([f for f in files if f != "manifest.jsonl"]) == 6
    entries = read_manifest(tmp_path / "a" / "manifest.jsonl")
    for spec, e in zip(specs, entries):
        s = generate_sample(spec)
        assert read_recording(e["recording"]) == s.recording
        assert np.array_equal(read_pgm(e["mask"]), s.gt_mask)
        assert e["t_ref_us"] == spec.t_ref
        assert SceneSpec.from_dict(e["spec"]) == spec

    generate_dataset(specs, tmp_path / "b")
    for name in files:
        assert file_digest(tmp_path / "a" / name) == file_digest(tmp_path / "b" / name)


def test_generate_empty_dataset(tmp_path):
    assert generate_dataset([], tmp_path) == []
    assert [p.name for p in tmp_path.iterdir()] == ["manifest.jsonl"]
    assert (tmp_path / "manifest.jsonl").read_text() == ""
