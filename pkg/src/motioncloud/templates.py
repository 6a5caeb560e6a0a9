"""Frame loading, dense grid optical flow and MVFI template rendering.

An MVFI template is a grayscale image where every grid flow vector above a
small magnitude floor is drawn as an oriented box: the box orientation
tells the flow direction (four bins, modulo 180 degrees), its length grows
with speed, and its intensity is a linear map of speed. Boxes are drawn
slowest first so the fastest motion ends up on top.
"""
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from . import kernels

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".png")
CANONICAL_SIZE = 256

MAG_FLOOR = 0.5
MAG_CAP = 16.0
INTENSITY_LOW = 64
INTENSITY_HIGH = 255
BOX_WIDTH = 6.0
BOX_MIN_LEN = 4.0
BOX_MAX_LEN = 32.0


class TemplateError(ValueError):
    pass


@dataclass
class FrameSequence:
    """Grayscale clip, ``frames`` is a uint8 array of shape (n, height, width)."""

    frames: np.ndarray
    fps: float = 25.0
    name: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise TemplateError("frames must be a (n, height, width) array")
        if len(self.frames) < 2:
            raise TemplateError("insufficient frames: need at least 2")
        if self.frames.shape[1] < 1 or self.frames.shape[2] < 1:
            raise TemplateError("empty frames")

    def __len__(self):
        return len(self.frames)

    @property
    def shape(self):
        return self.frames.shape[1:]

    def slice(self, start, stop):
        return FrameSequence(self.frames[start:stop], self.fps, self.name)


@dataclass(frozen=True)
class FlowConfig:
    pyramid_levels: int = 3
    window_radius: int = 7
    grid_spacing: int = 8
    min_texture: float = 25.0
    iterations: int = 20

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.grid_spacing < 1:
            raise ValueError("grid_spacing must be >= 1")


@dataclass
class FlowField:
    """Flow vectors (pixels/frame) on a regular grid of node positions."""

    grid_spacing: int
    origin: tuple
    u: np.ndarray
    v: np.ndarray
    frame_shape: tuple = field(default=(0, 0))

    @property
    def shape(self):
        return self.u.shape

    def node_positions(self):
        ny, nx = self.u.shape
        xs = self.origin[0] + self.grid_spacing * np.arange(nx)
        ys = self.origin[1] + self.grid_spacing * np.arange(ny)
        return np.meshgrid(xs, ys)

    def magnitude(self):
        return np.hypot(self.u, self.v)


# ---------------------------------------------------------------------------
# loading


def to_gray(img):
    """PIL image -> uint8 luma array (ITU-R BT.601 weights for colour input)."""
    if img.mode in ("I;16", "I;16B", "I", "F"):
        raise TemplateError(f"unsupported pixel mode {img.mode!r}: 8-bit images only")
    if img.mode != "L":
        img = img.convert("RGB").convert("L")
    return np.asarray(img, dtype=np.uint8)


def resize_square(gray, target=CANONICAL_SIZE):
    """Centre-crop to a square, then bilinear scale to ``target`` x ``target``."""
    h, w = gray.shape
    if h == target and w == target:
        return gray
    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    crop = gray[y0:y0 + side, x0:x0 + side]
    if side == target:
        return np.ascontiguousarray(crop)
    img = Image.fromarray(np.ascontiguousarray(crop), mode="L")
    return np.asarray(img.resize((target, target), Image.BILINEAR), dtype=np.uint8)


def sequence_from_images(named_images, target=CANONICAL_SIZE, fps=25.0, name=""):
    """Build a FrameSequence from ``(filename, bytes)`` pairs, ordered by filename."""
    items = sorted(
        (n, b) for n, b in named_images if os.path.splitext(n)[1].lower() in IMAGE_SUFFIXES
    )
    raw = []
    for fname, payload in items:
        try:
            with Image.open(io.BytesIO(payload)) as img:
                raw.append(to_gray(img))
        except TemplateError:
            raise
        except Exception as exc:
            raise TemplateError(f"unreadable frame {fname}: {exc}") from exc
    if len(raw) < 2:
        raise TemplateError("insufficient frames: need at least 2 readable images")
    shapes = {r.shape for r in raw}
    if len(shapes) != 1:
        raise TemplateError(f"mixed frame dimensions in clip: {sorted(shapes)}")
    frames = np.stack([resize_square(r, target) for r in raw])
    return FrameSequence(frames, fps=fps, name=name)


def load_sequence(path, target=CANONICAL_SIZE, fps=25.0):
    """Load a directory of PGM/PNG frames, ordered lexicographically by filename."""
    if not os.path.isdir(path):
        raise TemplateError(f"missing clip directory: {path}")
    names = sorted(
        f for f in os.listdir(path) if os.path.splitext(f)[1].lower() in IMAGE_SUFFIXES
    )
    pairs = []
    for fname in names:
        with open(os.path.join(path, fname), "rb") as fh:
            pairs.append((fname, fh.read()))
    name = os.path.basename(os.path.normpath(path))
    return sequence_from_images(pairs, target=target, fps=fps, name=name)


def write_frames(directory, frames, pattern="frame_{:05d}.pgm"):
    os.makedirs(directory, exist_ok=True)
    for i, frame in enumerate(frames):
        Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").save(
            os.path.join(directory, pattern.format(i))
        )


# ---------------------------------------------------------------------------
# optical flow

_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _downsample(img):
    blurred = ndimage.convolve1d(img, _BINOMIAL, axis=0, mode="nearest")
    blurred = ndimage.convolve1d(blurred, _BINOMIAL, axis=1, mode="nearest")
    return blurred[::2, ::2]


class _Pyramid:
    """Per-frame image pyramid with gradients, built once and reused."""

    def __init__(self, frame, levels):
        img = np.asarray(frame, dtype=np.float64)
        self.images = [img]
        for _ in range(levels - 1):
            img = _downsample(img)
            self.images.append(img)
        self.grads = []
        for im in self.images:
            gy, gx = np.gradient(im)
            self.grads.append((gx, gy))
        self._energy = {}

    def energy(self, radius):
        """Window-averaged squared gradient magnitude at level 0."""
        if radius not in self._energy:
            gx, gy = self.grads[0]
            self._energy[radius] = ndimage.uniform_filter(gx * gx + gy * gy, 2 * radius + 1,
                                                          mode="nearest")
        return self._energy[radius]


def grid_nodes(shape, cfg):
    """Symmetric node grid: (x positions, y positions); 180-degree rotation maps it onto itself."""
    h, w = shape
    margin = cfg.window_radius

    def axis(n):
        span = n - 1 - 2 * margin
        if span < 0:
            count = 1
        else:
            count = span // cfg.grid_spacing + 1
        origin = (n - 1 - (count - 1) * cfg.grid_spacing) / 2.0
        return origin + cfg.grid_spacing * np.arange(count)

    return axis(w), axis(h)


def _flow_from_pyramids(p0, p1, cfg, shape):
    xs, ys = grid_nodes(shape, cfg)
    gxn, gyn = np.meshgrid(xs, ys)
    px = gxn.ravel()
    py = gyn.ravel()
    dx = np.zeros_like(px)
    dy = np.zeros_like(py)
    # Gate on level-0 texture first; gated nodes are zeroed anyway, so skip them at every level.
    energy = kernels.sample_bilinear(p0.energy(cfg.window_radius), px, py)
    textured = energy >= cfg.min_texture
    for level in range(cfg.pyramid_levels - 1, -1, -1):
        scale = 2.0 ** level
        gx, gy = p0.grads[level]
        dx, dy, _ = kernels.lk_refine(
            p0.images[level], p1.images[level], gx, gy,
            px / scale, py / scale, dx / scale, dy / scale,
            cfg.window_radius, cfg.iterations, textured,
        )
        dx *= scale
        dy *= scale
    bad = ~textured | ~np.isfinite(dx) | ~np.isfinite(dy)
    dx[bad] = 0.0
    dy[bad] = 0.0
    shape2 = (len(ys), len(xs))
    return FlowField(cfg.grid_spacing, (float(xs[0]), float(ys[0])),
                     dx.reshape(shape2), dy.reshape(shape2), tuple(shape))


def dense_flow(prev, nxt, cfg=FlowConfig()):
    """Coarse-to-fine Lucas-Kanade flow sampled on the regular node grid."""
    prev = np.asarray(prev)
    nxt = np.asarray(nxt)
    if prev.shape != nxt.shape:
        raise TemplateError(f"frame dimension mismatch: {prev.shape} vs {nxt.shape}")
    p0 = _Pyramid(prev, cfg.pyramid_levels)
    p1 = _Pyramid(nxt, cfg.pyramid_levels)
    return _flow_from_pyramids(p0, p1, cfg, prev.shape)


# ---------------------------------------------------------------------------
# MVFI rendering


def magnitude_to_intensity(mag):
    mag = np.clip(np.asarray(mag, dtype=np.float64), MAG_FLOOR, MAG_CAP)
    frac = (mag - MAG_FLOOR) / (MAG_CAP - MAG_FLOOR)
    return np.rint(INTENSITY_LOW + (INTENSITY_HIGH - INTENSITY_LOW) * frac).astype(np.uint8)


def encode_mvfi(flow, dims):
    """Render a flow field as an MVFI template of shape ``dims`` (height, width)."""
    canvas = np.zeros(tuple(dims), dtype=np.uint8)
    gx, gy = flow.node_positions()
    mag = flow.magnitude().ravel()
    keep = np.flatnonzero(mag >= MAG_FLOOR)
    if keep.size == 0:
        return canvas
    order = keep[np.argsort(mag[keep], kind="stable")]
    m = mag[order]
    angle = np.mod(np.arctan2(flow.v.ravel()[order], flow.u.ravel()[order]), np.pi)
    bins = np.mod(np.rint(angle / (np.pi / 4.0)), 4.0)
    theta = bins * (np.pi / 4.0)
    length = np.clip(4.0 * m, BOX_MIN_LEN, BOX_MAX_LEN)
    kernels.paint_boxes(
        canvas,
        gx.ravel()[order],
        gy.ravel()[order],
        np.cos(theta),
        np.sin(theta),
        length / 2.0,
        np.full(m.shape, BOX_WIDTH / 2.0),
        magnitude_to_intensity(m),
    )
    return canvas


def sequence_templates(seq, cfg=FlowConfig()):
    """One template per consecutive frame pair: array of shape (n - 1, height, width)."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if len(frames) < 2:
        raise TemplateError("insufficient frames: need at least 2")
    shape = frames.shape[1:]
    out = np.empty((len(frames) - 1,) + tuple(shape), dtype=np.uint8)
    pyr_prev = _Pyramid(frames[0], cfg.pyramid_levels)
    for i in range(1, len(frames)):
        pyr_next = _Pyramid(frames[i], cfg.pyramid_levels)
        flow = _flow_from_pyramids(pyr_prev, pyr_next, cfg, shape)
        out[i - 1] = encode_mvfi(flow, shape)
        pyr_prev = pyr_next
    return out


def sequence_flows(seq, cfg=FlowConfig()):
    """Flow fields for each consecutive frame pair (diagnostics and generator checks)."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    pyrs = [_Pyramid(f, cfg.pyramid_levels) for f in frames]
    return [_flow_from_pyramids(a, b, cfg, frames.shape[1:]) for a, b in zip(pyrs, pyrs[1:])]
