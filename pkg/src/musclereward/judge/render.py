"""Stick-figure rendering of rollouts.

Frames are RGB ``uint8`` arrays. The canonical on-disk form is binary PPM;
PNG is used for endpoint payloads and run directories because it is an
order of magnitude smaller.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

FRAME_RATE = 10.0
MAX_FRAMES = 100
FRAME_SIZE = (320, 240)  # width, height in pixels
WALKER_VIEW = (4.0, -0.6, 2.4)  # window width, y min, y max (m)
ARM_VIEW = (-0.8, 0.8, -0.6, 0.6)

_BG = (245, 245, 240)
_GROUND = (90, 70, 50)
_TORSO = (30, 30, 30)
_RIGHT = (200, 60, 40)
_LEFT = (40, 90, 200)
_TARGET = (20, 150, 60)
_OBJECT = (230, 160, 20)


@dataclass
class FrameSequence:
    frames: np.ndarray  # (n, H, W, 3) uint8
    rate: float
    windows: np.ndarray  # (n, 4): x_min, x_max, y_min, y_max in metres

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[2], self.frames.shape[1]

    def to_ppm(self, i: int) -> bytes:
        h, w = self.frames.shape[1:3]
        return f"P6\n{w} {h}\n255\n".encode() + self.frames[i].tobytes()

    def to_png(self, i: int) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.frames[i], "RGB").save(buf, format="PNG", optimize=False)
        return buf.getvalue()

    def save(self, directory, fmt: str = "png") -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for i in range(len(self)):
            path = directory / f"frame_{i:03d}.{fmt}"
            path.write_bytes(self.to_png(i) if fmt == "png" else self.to_ppm(i))
            paths.append(path)
        return paths

    @classmethod
    def load(cls, directory, rate: float = FRAME_RATE) -> "FrameSequence":
        paths = sorted(Path(directory).glob("frame_*.*"))
        frames = np.stack([np.asarray(Image.open(p).convert("RGB")) for p in paths]) if paths else np.zeros((0, 1, 1, 3), np.uint8)
        return cls(frames, rate, np.full((len(paths), 4), np.nan))


def read_ppm(data: bytes) -> np.ndarray:
    head, rest = data.split(b"\n", 1)
    if head != b"P6":
        raise ValueError("not a binary PPM")
    dims, rest = rest.split(b"\n", 1)
    w, h = (int(x) for x in dims.split())
    _, pixels = rest.split(b"\n", 1)
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3)


def frame_count(duration: float, rate: float, max_frames: int = MAX_FRAMES) -> int:
    return min(max_frames, max(1, math.ceil(round(duration * rate, 9))))


def _to_px(x, y, window, size):
    x0, x1, y0, y1 = window
    w, h = size
    px = (np.asarray(x) - x0) / (x1 - x0) * (w - 1)
    py = (y1 - np.asarray(y)) / (y1 - y0) * (h - 1)
    return px, py


def _segments(morph, q):
    kin = morph.kin
    ends = kin.points(q, kin.C_ends)  # (2 * links, 2)
    return ends.reshape(-1, 2, 2)


def _link_colour(name: str):
    if name.endswith("_r"):
        return _RIGHT
    if name.endswith("_l"):
        return _LEFT
    return _TORSO


def _draw_frame(morph, terrain, q, obj_pose, target, size, window):
    img = Image.new("RGB", size, _BG)
    draw = ImageDraw.Draw(img)
    w, _ = size
    if morph.floating_base:
        xs = np.linspace(window[0], window[1], w // 4 + 1)
        ys = terrain.height(xs)
        px, py = _to_px(xs, ys, window, size)
        draw.line([(float(a), float(b)) for a, b in zip(px, py)], fill=_GROUND, width=2)
    else:
        bx, by = _to_px(0.0, 0.0, window, size)
        draw.ellipse([float(bx) - 4, float(by) - 4, float(bx) + 4, float(by) + 4], fill=_TORSO)
    if target is not None:
        tx, ty = _to_px(target[0], target[1], window, size)
        tx, ty = float(tx), float(ty)
        draw.line([(tx - 6, ty), (tx + 6, ty)], fill=_TARGET, width=2)
        draw.line([(tx, ty - 6), (tx, ty + 6)], fill=_TARGET, width=2)
        if target[2] is not None:
            ex, ey = _to_px(target[0] + 0.06 * math.cos(target[2]), target[1] + 0.06 * math.sin(target[2]), window, size)
            draw.line([(tx, ty), (float(ex), float(ey))], fill=_TARGET, width=1)
    for (p0, p1), link in zip(_segments(morph, q), morph.links):
        a = _to_px(p0[0], p0[1], window, size)
        b = _to_px(p1[0], p1[1], window, size)
        draw.line([(float(a[0]), float(a[1])), (float(b[0]), float(b[1]))], fill=_link_colour(link.name), width=3)
    if obj_pose is not None:
        ox, oy = _to_px(obj_pose[0], obj_pose[1], window, size)
        ox, oy = float(ox), float(oy)
        draw.rectangle([ox - 4, oy - 4, ox + 4, oy + 4], fill=_OBJECT)
        ex, ey = _to_px(obj_pose[0] + 0.05 * math.cos(obj_pose[2]), obj_pose[1] + 0.05 * math.sin(obj_pose[2]), window, size)
        draw.line([(ox, oy), (float(ex), float(ey))], fill=_OBJECT, width=2)
    return np.asarray(img, dtype=np.uint8)


def render_frames(trajectory, morphology, terrain, rate: float = FRAME_RATE, target=None,
                  size: tuple[int, int] = FRAME_SIZE, max_frames: int = MAX_FRAMES) -> FrameSequence:
    """Sample ``trajectory`` at ``rate`` Hz (at most ``max_frames``) and draw each sample.

    ``target`` is ``(x, y, angle_or_None)`` for manipulation tasks.
    """
    if len(trajectory) == 0:
        raise ValueError("cannot render an empty trajectory")
    n = frame_count(trajectory.duration, rate, max_frames)
    idx = np.clip(np.floor(np.arange(n) * len(trajectory) / n).astype(int), 0, len(trajectory) - 1)
    frames, windows = [], []
    for i in idx:
        q = trajectory.q[i]
        if morphology.floating_base:
            width, y0, y1 = WALKER_VIEW
            cx = float(q[0])
            window = (cx - width / 2, cx + width / 2, y0, y1)
        else:
            window = ARM_VIEW
        pose = trajectory.obj_pose[i] if trajectory.obj_pose is not None else None
        frames.append(_draw_frame(morphology, terrain, q, pose, target, size, window))
        windows.append(window)
    eff_rate = rate if n == math.ceil(round(trajectory.duration * rate, 9)) else n / trajectory.duration
    return FrameSequence(np.stack(frames), eff_rate, np.array(windows, dtype=float))


def task_target(task):
    if task.spec.target_position is None:
        return None
    x, y = task.spec.target_position
    return (x, y, task.spec.target_orientation)
