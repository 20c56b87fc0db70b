"""RGB images in [0, 1] and the network-input pipelines.

Pixel ``(i, j)`` has its center at continuous coordinate ``(i + 0.5, j + 0.5)``;
resizing maps output centers onto input centers under that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

NET_SIZE = 224
RESIZE_SHORT = 256
_RANGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Image:
    """``pixels`` has shape (height, width, 3), float64, values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be H x W x 3 with H, W >= 1, got {px.shape}")
        lo, hi = float(px.min()), float(px.max())
        if lo < -_RANGE_TOL or hi > 1 + _RANGE_TOL or not math.isfinite(lo + hi):
            raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")
        if lo < 0 or hi > 1:
            px = np.clip(px, 0.0, 1.0)
        elif px.flags.writeable:
            px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    @classmethod
    def constant(cls, height: int, width: int, value: float = 0.5) -> "Image":
        return cls(np.full((height, width, 3), float(value)))


def _axis_weights(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if (out_h, out_w) == (img.height, img.width):
        return img
    px = img.pixels
    r0, r1, fr = _axis_weights(img.height, out_h)
    c0, c1, fc = _axis_weights(img.width, out_w)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = px[r0] * (1 - fr) + px[r1] * fr
    out = top[:, c0] * (1 - fc) + top[:, c1] * fc
    return Image(np.clip(out, 0.0, 1.0))


def _round_half_away(v: float) -> int:
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def short_side_resize_size(height: int, width: int, short: int = RESIZE_SHORT) -> tuple:
    """(height, width) after scaling the smaller side to ``short``."""
    if height <= width:
        return short, _round_half_away(width * short / height)
    return _round_half_away(height * short / width), short


def center_crop_offsets(height: int, width: int, size: int = NET_SIZE) -> tuple:
    """(top, left) of the centered ``size`` window."""
    return (height - size) // 2, (width - size) // 2


def crop(img: Image, top: int, left: int, size: int = NET_SIZE) -> Image:
    if top < 0 or left < 0 or top + size > img.height or left + size > img.width:
        raise ValueError(f"crop {size}x{size} at ({top}, {left}) exceeds {img.height}x{img.width}")
    return Image(img.pixels[top:top + size, left:left + size])


def centered_crop_pipeline(img: Image) -> Image:
    h, w = short_side_resize_size(img.height, img.width)
    resized = resize_bilinear(img, h, w)
    top, left = center_crop_offsets(h, w)
    return crop(resized, top, left)


def whole_fov_resize(img: Image) -> Image:
    return resize_bilinear(img, NET_SIZE, NET_SIZE)


def random_crop_offsets(height: int, width: int, rng: np.random.Generator, size: int = NET_SIZE) -> tuple:
    if height < size or width < size:
        raise ValueError(f"{height}x{width} is smaller than the {size} crop")
    return int(rng.integers(0, height - size + 1)), int(rng.integers(0, width - size + 1))


def random_crop_pipeline(img: Image, rng_seed) -> Image:
    h, w = short_side_resize_size(img.height, img.width)
    resized = resize_bilinear(img, h, w)
    top, left = random_crop_offsets(h, w, np.random.default_rng(rng_seed))
    return crop(resized, top, left)


PIPELINES = {
    "centered_crop": centered_crop_pipeline,
    "whole_fov": whole_fov_resize,
}


def preprocess(img: Image, mode: str, rng_seed=None) -> Image:
    if mode == "random_crop":
        return random_crop_pipeline(img, rng_seed)
    try:
        return PIPELINES[mode](img)
    except KeyError:
        raise ValueError(f"unknown preprocessing mode {mode!r}") from None


def to_network_input(img: Image) -> np.ndarray:
    """3 x H x W array with the per-image mean subtracted."""
    chw = np.transpose(img.pixels, (2, 0, 1))
    return chw - chw.mean()


def rotate_image(img: Image, theta_deg: float) -> Image:
    """Rotate counter-clockwise (as displayed) about the image center.

    Bilinear sampling; destination pixels whose source falls outside the
    image take the per-channel image mean.
    """
    if abs(theta_deg) > 45:
        raise ValueError(f"rotation limited to |theta| <= 45 degrees, got {theta_deg}")
    if theta_deg == 0:
        return img
    h, w = img.height, img.width
    px = img.pixels
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map with y pointing down: CCW on screen is clockwise in (x, y)
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sxc = np.clip(sx, 0, w - 1)
    syc = np.clip(sy, 0, h - 1)
    x0 = np.floor(sxc).astype(np.intp)
    y0 = np.floor(syc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sxc - x0)[..., None]
    fy = (syc - y0)[..., None]
    top = px[y0, x0] * (1 - fx) + px[y0, x1] * fx
    bot = px[y1, x0] * (1 - fx) + px[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    fill = px.reshape(-1, 3).mean(axis=0)
    out = np.where(inside[..., None], out, fill)
    return Image(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------- file formats

PathLike = Union[str, Path]


def read_png(path: PathLike) -> Image:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def write_png(img: Image, path: PathLike) -> None:
    from PIL import Image as PILImage

    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path)


def write_raw(img: Image, path: PathLike) -> None:
    """ASCII header ``"<height> <width>\\n"`` then row-major RGB bytes."""
    arr = np.round(img.pixels * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"{img.height} {img.width}\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_raw(path: PathLike) -> Image:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing raw header")
    try:
        h, w = (int(v) for v in data[:nl].decode("ascii").split())
    except ValueError:
        raise ValueError(f"{path}: malformed raw header {data[:nl]!r}") from None
    body = data[nl + 1:]
    if len(body) != h * w * 3:
        raise ValueError(f"{path}: expected {h * w * 3} bytes of pixels, found {len(body)}")
    return Image(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3) / 255.0)


def read_image(path: PathLike) -> Image:
    p = Path(path)
    if p.suffix.lower() == ".raw":
        return read_raw(p)
    return read_png(p)
