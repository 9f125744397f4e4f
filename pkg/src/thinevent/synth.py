"""Synthetic event streams of a thin moving line, with clutter and noise.

Geometry uses pixel-centre coordinates: pixel ``(x, y)`` is centred on the
point ``(x, y)``. Segment positions describe the scene at ``t_ref``, the end
of the recording window; earlier positions are obtained by moving backwards
along the velocity.

Every straight band (the thin line, or a clutter bar of width ``width_px``)
emits one event per pixel per edge crossing: positive when its leading edge
passes the pixel centre, negative when its trailing edge does.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateSpec
from .events import EventRecording, write_recording
from .imageio import write_pgm

NOISE, LINE, CLUTTER = 0, 1, 2

Point = tuple[float, float]


@dataclass
class ClutterEdge:
    """A wide moving bar along a polyline; both of its edges emit events."""

    points: list[Point]
    width_px: float = 6.0
    velocity: tuple[float, float] | None = None  # defaults to the line velocity


@dataclass
class SceneSpec:
    width: int
    height: int
    line_segments: list[tuple[Point, Point]] = field(default_factory=list)
    line_thickness_px: float = 1.0
    velocity: tuple[float, float] = (0.0, 500.0)  # px/s
    duration_us: int = 33_000
    clutter_edges: list[ClutterEdge] = field(default_factory=list)
    noise_rate: float = 0.0  # events / pixel / s
    contrast_threshold_jitter: float = 0.0  # timestamp jitter std, us
    seed: int = 0

    def __post_init__(self):
        self.clutter_edges = [
            c if isinstance(c, ClutterEdge) else _clutter_from_obj(c) for c in self.clutter_edges
        ]

    @property
    def t_ref(self) -> int:
        return int(self.duration_us)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["line_segments"] = [tuple(tuple(p) for p in seg) for seg in d.get("line_segments", [])]
        d["velocity"] = tuple(d.get("velocity", (0.0, 500.0)))
        d["clutter_edges"] = [_clutter_from_obj(c) for c in d.get("clutter_edges", [])]
        return cls(**d)


def _clutter_from_obj(c) -> ClutterEdge:
    if isinstance(c, dict):
        v = c.get("velocity")
        return ClutterEdge(
            [tuple(p) for p in c["points"]], c.get("width_px", 6.0), None if v is None else tuple(v)
        )
    return ClutterEdge([tuple(p) for p in c])


@dataclass
class LabeledSample:
    recording: EventRecording
    gt_mask: np.ndarray  # (H, W) uint8 in {0, 1}
    t_ref: int
    origins: np.ndarray  # per-event NOISE / LINE / CLUTTER label

    def events_of(self, origin: int) -> np.ndarray:
        return np.flatnonzero(self.origins == origin)


def _validate(spec: SceneSpec) -> None:
    if spec.width <= 0 or spec.height <= 0:
        raise DegenerateSpec("non-positive geometry")
    if not spec.line_thickness_px > 0:
        raise DegenerateSpec("line thickness must be positive")
    if spec.noise_rate < 0:
        raise DegenerateSpec("noise rate must be non-negative")
    if spec.duration_us <= 0:
        raise DegenerateSpec("duration must be positive")
    for a, b in spec.line_segments:
        if math.dist(a, b) == 0:
            raise DegenerateSpec(f"zero-length segment at {a}")
    if spec.line_segments and math.hypot(*spec.velocity) == 0:
        raise DegenerateSpec("a static line produces no events")
    for c in spec.clutter_edges:
        if len(c.points) < 2 or c.width_px <= 0:
            raise DegenerateSpec("clutter needs two or more points and positive width")


def _band_events(a, b, width, velocity, duration_us, xs, ys):
    """Edge-crossing events of a straight band swept over the pixel grid.

    Returns ``(t, x, y, p)`` arrays with float timestamps, unsorted.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = np.linalg.norm(b - a)
    if length == 0:
        return None
    u = (b - a) / length
    n = np.array([-u[1], u[0]])
    v_us = np.asarray(velocity, dtype=float) * 1e-6
    nv = float(n @ v_us)
    if nv == 0:
        return None  # motion along the band changes no pixel
    if nv < 0:
        n, nv = -n, -nv
    t_ref = float(duration_us)
    rel_x = xs - a[0]
    rel_y = ys - a[1]
    dist = n[0] * rel_x + n[1] * rel_y  # signed distance from the band centre at t_ref
    along = u[0] * rel_x + u[1] * rel_y
    uv = float(u @ v_us)
    out = []
    for offset, polarity in ((0.5 * width, 1), (-0.5 * width, -1)):
        t_cross = t_ref - (offset - dist) / nv
        s = along + uv * (t_ref - t_cross)
        hit = (t_cross >= 0) & (t_cross <= t_ref) & (s >= 0) & (s <= length)
        k = np.count_nonzero(hit)
        out.append((t_cross[hit], xs[hit], ys[hit], np.full(k, polarity, dtype=np.int8)))
    return tuple(np.concatenate(c) for c in zip(*out))


def rasterize_segments(segments, thickness, width, height) -> np.ndarray:
    """Mask of pixels whose centre lies closer than ``thickness/2 + 0.5`` to a segment."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    mask = np.zeros((height, width), dtype=np.uint8)
    reach = 0.5 * thickness + 0.5
    for a, b in segments:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        d = b - a
        s = np.clip(((xs - a[0]) * d[0] + (ys - a[1]) * d[1]) / (d @ d), 0.0, 1.0)
        dist = np.hypot(xs - (a[0] + s * d[0]), ys - (a[1] + s * d[1]))
        mask[dist < reach] = 1
    return mask


def generate_sample(spec: SceneSpec) -> LabeledSample:
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    W, H = spec.width, spec.height
    ys, xs = np.mgrid[0:H, 0:W]
    xs = xs.ravel().astype(float)
    ys = ys.ravel().astype(float)

    chunks = []  # (t, x, y, p, origin)
    bands = [(a, b, spec.line_thickness_px, spec.velocity, LINE) for a, b in spec.line_segments]
    for c in spec.clutter_edges:
        vel = spec.velocity if c.velocity is None else c.velocity
        for a, b in zip(c.points[:-1], c.points[1:]):
            bands.append((a, b, c.width_px, vel, CLUTTER))
    for a, b, width, vel, origin in bands:
        ev = _band_events(a, b, width, vel, spec.duration_us, xs, ys)
        if ev is None or len(ev[0]) == 0:
            continue
        t = ev[0]
        if spec.contrast_threshold_jitter > 0:
            t = t + rng.normal(0.0, spec.contrast_threshold_jitter, len(t))
        chunks.append((t, ev[1], ev[2], ev[3], np.full(len(t), origin, dtype=np.int8)))

    if spec.noise_rate > 0:
        k = rng.poisson(spec.noise_rate * W * H * spec.duration_us * 1e-6)
        chunks.append((
            rng.uniform(0, spec.duration_us, k),
            rng.integers(0, W, k).astype(float),
            rng.integers(0, H, k).astype(float),
            np.where(rng.random(k) < 0.5, 1, -1).astype(np.int8),
            np.full(k, NOISE, dtype=np.int8),
        ))

    if chunks:
        t, x, y, p, origin = (np.concatenate(c) for c in zip(*chunks))
        t = np.clip(np.rint(t), 0, spec.duration_us).astype(np.int64)
        order = np.argsort(t, kind="stable")
        rec = EventRecording(W, H, t[order], x[order], y[order], p[order])
        origin = origin[order]
    else:
        rec = EventRecording.empty(W, H)
        origin = np.zeros(0, dtype=np.int8)

    mask = rasterize_segments(spec.line_segments, spec.line_thickness_px, W, H)
    return LabeledSample(rec, mask, spec.t_ref, origin)


def generate_dataset(specs: list[SceneSpec], out_dir: str | os.PathLike) -> list[dict]:
    """Write ``sample_NNNN.skys`` / ``sample_NNNN.pgm`` pairs and ``manifest.jsonl``.

    Paths in the manifest are relative to ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, spec in enumerate(specs):
        sample = generate_sample(spec)
        rec_name = f"sample_{i:04d}.skys"
        mask_name = f"sample_{i:04d}.pgm"
        write_recording(sample.recording, out / rec_name, "binary")
        write_pgm(sample.gt_mask, out / mask_name)
        manifest.append(
            {"recording": rec_name, "mask": mask_name, "t_ref_us": sample.t_ref, "spec": spec.to_dict()}
        )
    with open(out / "manifest.jsonl", "w") as fh:
        for entry in manifest:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: str | os.PathLike) -> list[dict]:
    """Manifest entries with ``recording`` and ``mask`` resolved to absolute paths."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    entries = []
    for line in path.read_text().splitlines():
        if line.strip():
            e = json.loads(line)
            e["recording"] = str(path.parent / e["recording"])
            e["mask"] = str(path.parent / e["mask"])
            entries.append(e)
    return entries


def _chord(cx, cy, angle, half_len):
    dx, dy = math.cos(angle) * half_len, math.sin(angle) * half_len
    return ((cx - dx, cy - dy), (cx + dx, cy + dy))


def random_scene(
    seed: int,
    size: int = 128,
    clutter: tuple[int, int] = (0, 3),
    noise_rate: tuple[float, float] = (0.0, 3.0),
    duration_us: int = 33_000,
) -> SceneSpec:
    """A randomized single-wire scene with bar clutter and background noise.

    The wire is a long chord through the frame moving roughly perpendicular to
    itself; clutter bars are wider and move independently.
    """
    rng = np.random.default_rng([seed, 0x5EED])
    margin = size * 0.15
    angle = rng.uniform(0, math.pi)
    cx, cy = rng.uniform(margin, size - margin, 2)
    full = size * 1.5
    half_len = full if rng.random() < 0.7 else rng.uniform(0.3, 0.6) * size
    seg = _chord(cx, cy, angle, half_len)
    normal = angle + math.pi / 2 + rng.uniform(-0.5, 0.5)
    speed = rng.uniform(300.0, 900.0)
    velocity = (speed * math.cos(normal), speed * math.sin(normal))

    bars = []
    for _ in range(int(rng.integers(clutter[0], clutter[1] + 1))):
        a = rng.uniform(0, math.pi)
        bx, by = rng.uniform(0, size, 2)
        pts = _chord(bx, by, a, rng.uniform(0.3, 1.0) * size)
        if rng.random() < 0.4:
            # bent polyline: add a kink at the far end
            a2 = a + rng.uniform(-1.2, 1.2)
            end = pts[1]
            pts = (*pts, (end[0] + math.cos(a2) * size * 0.4, end[1] + math.sin(a2) * size * 0.4))
        vdir = a + math.pi / 2 + rng.uniform(-0.6, 0.6)
        vmag = rng.uniform(200.0, 900.0)
        bars.append(ClutterEdge(
            [tuple(map(float, p)) for p in pts],
            float(rng.uniform(4.0, 10.0)),
            (vmag * math.cos(vdir), vmag * math.sin(vdir)),
        ))

    return SceneSpec(
        width=size,
        height=size,
        line_segments=[tuple(tuple(map(float, p)) for p in seg)],
        line_thickness_px=float(rng.uniform(0.5, 1.0)),
        velocity=tuple(map(float, velocity)),
        duration_us=duration_us,
        clutter_edges=bars,
        noise_rate=float(rng.uniform(*noise_rate)),
        contrast_threshold_jitter=float(rng.uniform(0.0, 200.0)),
        seed=int(seed),
    )


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
