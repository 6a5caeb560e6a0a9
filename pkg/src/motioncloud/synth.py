"""Deterministic synthetic action clips.

Four kinds of motion, each a textured block (or group of blocks) on a flat
background:

    wave    horizontal sinusoidal oscillation
    bounce  vertical parabolic hops
    walk    slow horizontal translation across the centre, two sub-blocks
            swinging in antiphase
    run     fast horizontal translation (>= 3x walk), reflecting at the borders

Amplitudes, periods and speeds are jittered by +/-20 % from a seeded RNG.
"""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .templates import write_frames

KINDS = ("wave", "bounce", "walk", "run")
BACKGROUND = 40


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple = KINDS
    clips_per_class: int = 12
    frames: int = 64
    size: int = 256
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.classes) - set(KINDS)
        if unknown:
            raise ValueError(f"unknown synthetic classes: {sorted(unknown)}")
        if self.clips_per_class < 1 or self.frames < 2 or self.size < 32:
            raise ValueError("invalid synthetic spec")


@dataclass
class SynthClip:
    label: str
    clip_id: str
    seed: list
    frames: np.ndarray = field(repr=False)


def _texture(rng, h, w):
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.2)
    tex = 150.0 + 50.0 * tex / tex.std()
    return np.clip(tex, 0, 255).astype(np.uint8)


def _paste(canvas, tex, x, y):
    h, w = tex.shape
    H, W = canvas.shape
    x = int(round(x))
    y = int(round(y))
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x1 > x0 and y1 > y0:
        canvas[y0:y1, x0:x1] = tex[y0 - y:y1 - y, x0 - x:x1 - x]


def _jit(rng):
    return rng.uniform(0.8, 1.2)


def _reflect(pos, lo, hi):
    span = hi - lo
    if span <= 0:
        return lo
    p = np.mod(pos - lo, 2 * span)
    return lo + (p if p <= span else 2 * span - p)


def render_clip(kind, rng, frames=64, size=256):
    """Frames (n, size, size) uint8 for one clip of the given kind."""
    scale = size / 256.0
    out = np.full((frames, size, size), BACKGROUND, dtype=np.uint8)
    t = np.arange(frames, dtype=np.float64)
    if kind == "wave":
        bs = int(48 * scale)
        tex = _texture(rng, bs, bs)
        amp = 40 * scale * _jit(rng)
        period = 20 * _jit(rng)
        phase = rng.uniform(0, 2 * np.pi)
        cx = size / 2 + rng.uniform(-10, 10) * scale
        cy = size / 2 + rng.uniform(-30, 30) * scale
        for i in range(frames):
            x = cx + amp * np.sin(2 * np.pi * t[i] / period + phase)
            _paste(out[i], tex, x - bs / 2, cy - bs / 2)
    elif kind == "bounce":
        bs = int(48 * scale)
        tex = _texture(rng, bs, bs)
        height = 70 * scale * _jit(rng)
        period = 24 * _jit(rng)
        phase = rng.uniform(0, 1)
        cx = size / 2 + rng.uniform(-40, 40) * scale
        floor = size / 2 + 60 * scale + rng.uniform(-10, 10) * scale
        for i in range(frames):
            tau = np.mod(t[i] / period + phase, 1.0)
            y = floor - 4.0 * height * tau * (1.0 - tau)
            _paste(out[i], tex, cx - bs / 2, y - bs / 2)
    elif kind in ("walk", "run"):
        bw, bh = int(40 * scale), int(64 * scale)
        lw, lh = int(16 * scale), int(32 * scale)
        body = _texture(rng, bh, bw)
        legs = (_texture(rng, lh, lw), _texture(rng, lh, lw))
        if kind == "walk":
            speed = 1.2 * scale * _jit(rng)
            swing, swing_period = 6 * scale * _jit(rng), 16 * _jit(rng)
        else:
            speed = 5.5 * scale * _jit(rng)
            swing, swing_period = 10 * scale * _jit(rng), 8 * _jit(rng)
        direction = 1.0 if rng.uniform() < 0.5 else -1.0
        lo, hi = 16 * scale, size - bw - 16 * scale
        # the actor's path crosses the frame centre, as in framed footage
        mid = (size - bw) / 2 + rng.uniform(-20, 20) * scale
        x0 = mid - direction * speed * (frames - 1) / 2
        ytop = size / 2 - bh / 2 - 16 * scale + rng.uniform(-15, 15) * scale
        phase = rng.uniform(0, 2 * np.pi)
        for i in range(frames):
            x = _reflect(x0 + direction * speed * t[i], lo, hi)
            _paste(out[i], body, x, ytop)
            s = swing * np.sin(2 * np.pi * t[i] / swing_period + phase)
            _paste(out[i], legs[0], x + bw / 2 - lw - 2 + s, ytop + bh)
            _paste(out[i], legs[1], x + bw / 2 + 2 - s, ytop + bh)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return out


def static_clip(rng, frames=64, size=256):
    """A textured but motionless scene (the null action)."""
    out = np.full((frames, size, size), BACKGROUND, dtype=np.uint8)
    tex = _texture(rng, size // 4, size // 4)
    for i in range(frames):
        _paste(out[i], tex, size // 3, size // 3)
    return out


def generate_clips(spec=SynthSpec(), out_dir=None):
    """Render every clip of ``spec``; optionally write the on-disk dataset layout.

    Layout: ``<out_dir>/<class>/<clip_id>/frame_00000.pgm`` plus ``manifest.json``.
    """
    clips = []
    for ci, kind in enumerate(spec.classes):
        for j in range(spec.clips_per_class):
            seed = [int(spec.seed), KINDS.index(kind), j]
            rng = np.random.default_rng(seed)
            frames = render_clip(kind, rng, spec.frames, spec.size)
            clips.append(SynthClip(kind, f"{kind}_{j:02d}", seed, frames))
    if out_dir is not None:
        for clip in clips:
            write_frames(os.path.join(out_dir, clip.label, clip.clip_id), clip.frames)
        manifest = {
            "spec": {**asdict(spec), "classes": list(spec.classes)},
            "classes": list(spec.classes),
            "clips": [{"label": c.label, "clip_id": c.clip_id, "seed": c.seed} for c in clips],
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return clips


def timeline(parts, seed=0, size=256):
    """Concatenate clips into one long video.

    ``parts`` is a list of ``(kind, n_frames)``; kind ``"null"`` gives a
    static scene. Returns ``(frames, intervals)`` with ground-truth
    ``(start, end, kind)`` intervals.
    """
    chunks = []
    intervals = []
    pos = 0
    for i, (kind, n) in enumerate(parts):
        rng = np.random.default_rng([int(seed), 99, i])
        if kind == "null":
            chunk = static_clip(rng, n, size)
        else:
            chunk = render_clip(kind, rng, n, size)
        chunks.append(chunk)
        intervals.append((pos, pos + n, kind))
        pos += n
    return np.concatenate(chunks), intervals
