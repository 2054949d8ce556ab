"""Images, face regions, Gaussian face blurring and the synthetic face generator.

All raster data is held as ``uint8`` arrays of shape ``(height, width, 3)``.
Blur strength is expressed through a *blur factor* ``f >= 1``: the Gaussian
kernel is ``round(extent / f)`` taps wide, where ``extent`` is the smaller
side of the face region. ``f = 1`` spans the whole face, large ``f`` is a
no-op.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ImageFormatError, InvalidParameterError

RGB = tuple[int, int, int]


class MaskLabel(enum.IntEnum):
    """Class index doubles as the network output index."""

    NO_MASK = 0
    MASK = 1

    @property
    def text(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "MaskLabel":
        try:
            return cls[text.upper()]
        except KeyError:
            raise InvalidParameterError(f"unknown label {text!r}") from None


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable RGB raster, row-major, one ``uint8`` per channel."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidParameterError(f"expected (h, w, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidParameterError("image must be at least 1x1")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) and not np.all(np.isfinite(px)):
                raise InvalidParameterError("non-finite pixel values")
            if px.min() < 0 or px.max() > 255:
                raise InvalidParameterError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.array(px, dtype=np.uint8, copy=True, order="C")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def blank(cls, width: int, height: int, color: RGB = (0, 0, 0)) -> "Image":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[...] = color
        return cls(px)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"Image({self.width}x{self.height})"


@dataclass(frozen=True)
class FaceRegion:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w < 1 or self.h < 1:
            raise InvalidParameterError(f"invalid face region {self}")

    def fits(self, image: Image) -> bool:
        return self.x + self.w <= image.width and self.y + self.h <= image.height

    def check_inside(self, image: Image) -> None:
        if not self.fits(image):
            raise InvalidParameterError(
                f"{self} exceeds image bounds {image.width}x{image.height}"
            )

    def crop(self, image: Image) -> np.ndarray:
        self.check_inside(image)
        return image.pixels[self.y : self.y + self.h, self.x : self.x + self.w]

    def shifted(self, dx: int = 0, dy: int = 0) -> "FaceRegion":
        return FaceRegion(self.x + dx, self.y + dy, self.w, self.h)

    def iou(self, other: "FaceRegion") -> float:
        ix = max(0, min(self.x + self.w, other.x + other.w) - max(self.x, other.x))
        iy = max(0, min(self.y + self.h, other.y + other.h) - max(self.y, other.y))
        inter = ix * iy
        union = self.w * self.h + other.w * other.h - inter
        return inter / union


# ---------------------------------------------------------------------------
# Gaussian blur


def round_half_away(x):
    """Round to nearest integer, ties away from zero (numpy rounds ties to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _check_factor(f: float) -> float:
    f = float(f)
    if not math.isfinite(f) or f < 1:
        raise InvalidParameterError(f"blur factor must be >= 1, got {f}")
    return f


@dataclass(frozen=True, eq=False)
class GaussianKernel:
    size: int
    sigma: float
    weights: np.ndarray = field(repr=False)

    @property
    def radius(self) -> int:
        return (self.size - 1) // 2


def kernel_size(region_extent: int, f: float) -> int:
    """Odd tap count for a region of ``region_extent`` pixels at blur factor ``f``."""
    if region_extent < 1:
        raise InvalidParameterError(f"region extent must be >= 1, got {region_extent}")
    f = _check_factor(f)
    k = int(round_half_away(region_extent / f))
    k = max(k, 1)
    if k % 2 == 0:
        k += 1
    # k <= extent already since f >= 1; the odd bump can add one more tap.
    return min(k, region_extent if region_extent % 2 else region_extent + 1)


def make_kernel(region_extent: int, f: float) -> GaussianKernel:
    k = kernel_size(region_extent, f)
    sigma = max(k / 6.0, 0.3)
    r = (k - 1) // 2
    i = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-(i * i) / (2.0 * sigma * sigma))
    w /= w.sum()
    w.setflags(write=False)
    return GaussianKernel(size=k, sigma=sigma, weights=w)


def blur_region(image: Image, face: FaceRegion, f: float) -> Image:
    """Blur the pixels inside ``face``; everything outside is left bit-identical.

    The kernel is applied separably (rows, then columns). Neighbourhood reads
    use edge-clamped addressing over the whole image, so background next to the
    face bleeds in, but only pixels inside ``face`` are written.
    """
    face.check_inside(image)
    kern = make_kernel(min(face.w, face.h), f)
    if kern.size == 1:
        return image
    r = kern.radius
    g = kern.weights
    src = image.pixels.astype(np.float64)
    H, W = image.height, image.width

    rows = np.clip(np.arange(face.y - r, face.y + face.h + r), 0, H - 1)
    block = src[rows]
    cols = np.arange(face.x, face.x + face.w)
    horiz = np.zeros((len(rows), face.w, 3))
    for j in range(kern.size):
        horiz += g[j] * block[:, np.clip(cols + j - r, 0, W - 1)]

    vert = np.zeros((face.h, face.w, 3))
    for j in range(kern.size):
        vert += g[j] * horiz[j : j + face.h]

    out = image.pixels.copy()
    out[face.y : face.y + face.h, face.x : face.x + face.w] = np.clip(
        round_half_away(vert), 0, 255
    ).astype(np.uint8)
    return Image(out)


def blur_regions(image: Image, faces: Sequence[FaceRegion], f: float) -> Image:
    for face in faces:
        image = blur_region(image, face, f)
    return image


def region_variance(image: Image, face: FaceRegion) -> np.ndarray:
    """Per-channel population variance of the pixels inside ``face``."""
    return face.crop(image).reshape(-1, 3).astype(np.float64).var(axis=0)


# ---------------------------------------------------------------------------
# PPM (P6) codec


def encode_ppm(image: Image) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


def decode_ppm(data: bytes) -> Image:
    pos = 0
    tokens = []
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after PPM header")
    pos += 1

    magic, *dims = tokens
    if magic != b"P6":
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    try:
        width, height, maxval = (int(t) for t in dims)
    except ValueError:
        raise ImageFormatError(f"malformed PPM header fields {dims!r}") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}; only 255 is handled")

    expected = width * height * 3
    payload = data[pos:]
    if len(payload) < expected:
        raise ImageFormatError(f"truncated PPM payload: {len(payload)} of {expected} bytes")
    if len(payload) > expected:
        raise ImageFormatError(f"{len(payload) - expected} trailing bytes after PPM payload")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(px)


def write_image(image: Image, path) -> None:
    Path(path).write_bytes(encode_ppm(image))


def read_image(path) -> Image:
    return decode_ppm(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Synthetic faces

SKIN_TONES: tuple[RGB, ...] = (
    (236, 188, 160),
    (224, 172, 138),
    (205, 145, 110),
    (186, 124, 92),
    (160, 102, 72),
    (138, 84, 58),
)

MASK_PALETTE: tuple[RGB, ...] = (
    (150, 190, 230),  # surgical blue
    (235, 235, 238),
    (35, 35, 40),
    (128, 130, 140),
    (40, 55, 110),
    (230, 160, 190),
    (80, 150, 100),
    (200, 60, 60),
)

LIP_COLOR: RGB = (150, 48, 60)
EYE_COLOR: RGB = (40, 28, 26)
NOISE_SIGMA = 3.0


def is_skin(rgb) -> np.ndarray:
    """Rule-based skin-tone predicate, broadcast over the last axis."""
    px = np.asarray(rgb).astype(np.int32)
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    return (r > 95) & (g > 40) & (b > 20) & (r > g) & (r > b) & (np.abs(r - g) > 15)


@dataclass(frozen=True)
class SynthSpec:
    """Everything needed to render one synthetic face deterministically.

    For hard cases the painted mask is pulled most of the way towards the
    person's skin tone (``mask_color`` only tints it), and half of them get a
    mouth painted onto the mask.
    """

    image_size: int = 64
    masked: bool = False
    hard_case: bool = False
    mask_color: RGB = MASK_PALETTE[0]
    person_id: str = "p0"
    clothing_color: RGB = (60, 90, 160)
    rng_seed: int = 0

    def __post_init__(self):
        if self.image_size < 32:
            raise InvalidParameterError(f"image_size must be >= 32, got {self.image_size}")
        for name in ("mask_color", "clothing_color"):
            c = tuple(int(v) for v in getattr(self, name))
            if len(c) != 3 or min(c) < 0 or max(c) > 255:
                raise InvalidParameterError(f"{name} must be an RGB triple, got {c}")
            object.__setattr__(self, name, c)
        if not 0 <= self.rng_seed < 2**64:
            raise InvalidParameterError("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class LabeledSample:
    image: Image
    face: FaceRegion
    label: MaskLabel
    spec: SynthSpec

    def __post_init__(self):
        if (self.label == MaskLabel.MASK) != self.spec.masked:
            raise InvalidParameterError("label disagrees with spec.masked")
        self.face.check_inside(self.image)


def _ellipse(xx, yy, cx, cy, ax, ay):
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def _jitter(rng, base: RGB, amount: int) -> np.ndarray:
    return np.clip(np.asarray(base) + rng.integers(-amount, amount + 1, size=3), 0, 255)


def synthesize(spec: SynthSpec) -> LabeledSample:
    S = spec.image_size
    rng = np.random.default_rng(spec.rng_seed)

    skin = _jitter(rng, SKIN_TONES[rng.integers(len(SKIN_TONES))], 8)
    if not is_skin(skin):
        skin = np.asarray(SKIN_TONES[2])
    cx = S * (0.5 + rng.uniform(-0.06, 0.06))
    cy = S * (0.45 + rng.uniform(-0.04, 0.04))
    ax = S * rng.uniform(0.25, 0.31)
    ay = S * rng.uniform(0.32, 0.37)

    yy, xx = np.mgrid[0:S, 0:S] + 0.5
    canvas = np.empty((S, S, 3), dtype=np.float64)
    canvas[...] = spec.clothing_color

    face = _ellipse(xx, yy, cx, cy, ax, ay)
    canvas[face] = skin

    eye_dx = ax * rng.uniform(0.3, 0.42)
    eye_y = cy - ay * rng.uniform(0.15, 0.28)
    eye_r = max(ax * 0.11, 1.2)
    for sx in (-1, 1):
        canvas[_ellipse(xx, yy, cx + sx * eye_dx, eye_y, eye_r, eye_r * 0.8)] = EYE_COLOR

    nose = _ellipse(xx, yy, cx, cy + ay * 0.15, ax * 0.1, ay * 0.12)
    canvas[nose] = np.clip(skin * 0.85, 0, 255)

    mouth_y = cy + ay * rng.uniform(0.45, 0.55)
    mouth_w = ax * rng.uniform(0.35, 0.5)
    mouth = _ellipse(xx, yy, cx, mouth_y, mouth_w, ay * 0.09)
    canvas[mouth] = LIP_COLOR

    if spec.masked:
        color = np.asarray(spec.mask_color, dtype=np.float64)
        painted_mouth = False
        if spec.hard_case:
            color = np.round(0.75 * skin + 0.25 * color)
            painted_mouth = bool(rng.integers(2))
        top, bottom = cy + ay * 0.02, cy + ay * 0.9
        t = np.clip((yy - top) / (bottom - top), 0.0, 1.0)
        half = ax * (0.95 - 0.35 * t)
        trapezoid = (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half)
        covered = trapezoid & _ellipse(xx, yy, cx, cy, ax * 1.05, ay * 1.02)
        canvas[covered] = color
        if painted_mouth:
            canvas[mouth] = LIP_COLOR

    canvas += rng.normal(0.0, NOISE_SIGMA, size=canvas.shape)
    pixels = np.clip(round_half_away(canvas), 0, 255).astype(np.uint8)

    ys, xs = np.nonzero(face)
    region = FaceRegion(
        int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)
    )
    label = MaskLabel.MASK if spec.masked else MaskLabel.NO_MASK
    return LabeledSample(Image(pixels), region, label, spec)


def random_clothing(rng: np.random.Generator) -> RGB:
    """Clothing colour that never passes the skin predicate."""
    while True:
        c = tuple(int(v) for v in rng.integers(0, 256, size=3))
        if not is_skin(c):
            return c


def dataset_specs(
    per_class: int,
    seed: int,
    hard_fraction: float = 0.0,
    image_size: int = 64,
) -> list[SynthSpec]:
    """Balanced, shuffled list of specs: ``per_class`` masked and unmasked each.

    ``round(hard_fraction * per_class)`` of the masked specs are hard cases.
    """
    if per_class < 1:
        raise InvalidParameterError("per_class must be >= 1")
    if not 0.0 <= hard_fraction <= 1.0:
        raise InvalidParameterError("hard_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_hard = int(round_half_away(hard_fraction * per_class))
    flags = [(True, i < n_hard) for i in range(per_class)] + [(False, False)] * per_class
    order = rng.permutation(len(flags))
    specs = []
    for idx, k in enumerate(order):
        masked, hard = flags[k]
        mask_color = tuple(int(v) for v in _jitter(rng, MASK_PALETTE[rng.integers(len(MASK_PALETTE))], 12))
        specs.append(
            SynthSpec(
                image_size=image_size,
                masked=masked,
                hard_case=hard,
                mask_color=mask_color,
                person_id=f"p{idx:05d}",
                clothing_color=random_clothing(rng),
                rng_seed=int(rng.integers(0, 2**63)),
            )
        )
    return specs


def make_dataset(
    per_class: int, seed: int, hard_fraction: float = 0.0, image_size: int = 64
) -> list[LabeledSample]:
    return [synthesize(s) for s in dataset_specs(per_class, seed, hard_fraction, image_size)]


def hard_case_holdout(n: int, seed: int, image_size: int = 64) -> list[LabeledSample]:
    """``n`` masked faces, all hard cases (skin-tinted or painted-mouth masks)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        spec = SynthSpec(
            image_size=image_size,
            masked=True,
            hard_case=True,
            mask_color=tuple(int(v) for v in _jitter(rng, MASK_PALETTE[rng.integers(len(MASK_PALETTE))], 12)),
            person_id=f"h{i:04d}",
            clothing_color=random_clothing(rng),
            rng_seed=int(rng.integers(0, 2**63)),
        )
        out.append(synthesize(spec))
    return out
