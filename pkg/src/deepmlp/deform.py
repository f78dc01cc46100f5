"""Per-image training-set deformation: smoothed random elastic fields plus
rotation-or-shear and anisotropic scaling, composed in one resampling pass.

All geometry lives on the 29x29 grid (the 28x28 originals are re-centered
onto a proper center pixel by a half-pixel bilinear shift). Displacements
are in pixel units; samples leaving the image read the background value
-1.0. Every random choice comes from a per-(epoch, image) substream, so
an epoch's output is a pure function of (seed, epoch, image, params) no
matter how many lanes process it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .mnist_io import Dataset, normalize_image
from .rng import STREAM_DEFORM, substream

GRID = 29
CENTER = (GRID - 1) / 2.0
BACKGROUND = -1.0


class InvalidSigma(ValueError):
    pass


class EvenSize(ValueError):
    pass


def _check_range(name, rng_pair):
    lo, hi = rng_pair
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be a finite (lo, hi) with lo <= hi, got {rng_pair}")


@dataclass(frozen=True)
class DeformParams:
    """Tunables of the deformation pipeline (angles in degrees, scales in %)."""

    sigma_range: tuple[float, float] = (5.0, 6.0)
    alpha_range: tuple[float, float] = (36.0, 38.0)
    beta_default: float = 15.0
    beta_reduced: float = 7.5
    gamma_range: tuple[float, float] = (15.0, 20.0)
    kernel_size: int = 21

    def __post_init__(self):
        _check_range("sigma_range", self.sigma_range)
        _check_range("alpha_range", self.alpha_range)
        _check_range("gamma_range", self.gamma_range)
        if self.sigma_range[0] <= 0:
            raise InvalidSigma(f"sigma must be positive, got {self.sigma_range}")
        if self.alpha_range[0] < 0 or self.gamma_range[0] < 0:
            raise ValueError("alpha and gamma ranges must be non-negative")
        if self.beta_default < 0 or self.beta_reduced < 0:
            raise ValueError("beta angles must be non-negative")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise EvenSize(f"kernel_size must be odd and >= 3, got {self.kernel_size}")

    @classmethod
    def identity(cls) -> "DeformParams":
        """alpha=0, beta=0, gamma=0: the pipeline degenerates to the upscale."""
        return cls(alpha_range=(0.0, 0.0), beta_default=0.0, beta_reduced=0.0,
                   gamma_range=(0.0, 0.0))


@dataclass
class DisplacementField:
    """Per-pixel (dx, dy) source offsets in pixel units on the 29x29 grid."""

    dx: np.ndarray
    dy: np.ndarray


@dataclass(frozen=True)
class AffineSample:
    mode: str  # "rotation" | "shear"
    angle: float  # degrees, |angle| <= beta
    sx: float
    sy: float


def upscale_28_to_29(img: np.ndarray) -> np.ndarray:
    """Re-center a 28x28 image onto the 29x29 grid by a half-pixel bilinear
    shift (border samples clamp to the edge), after normalizing to [-1, 1].

    Each interior source pixel hands exactly weight 1 to its four
    neighbours, so digit mass is conserved.
    """
    img = np.asarray(img)
    if img.shape != (28, 28):
        raise ValueError(f"expected a 28x28 image, got {img.shape}")
    norm = normalize_image(img)
    p = np.pad(norm, 1, mode="edge")  # (30, 30): p[k] = norm[clip(k-1, 0, 27)]
    return 0.25 * (p[:-1, :-1] + p[:-1, 1:] + p[1:, :-1] + p[1:, 1:])


def gaussian_kernel_1d(sigma: float, size: int) -> np.ndarray:
    if not (sigma > 0):
        raise InvalidSigma(f"sigma must be positive, got {sigma}")
    if size % 2 == 0:
        raise EvenSize(f"kernel size must be odd, got {size}")
    offs = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(offs * offs) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """2-D Gaussian sampled at integer offsets, normalized to sum 1."""
    g = gaussian_kernel_1d(sigma, size)
    k = np.outer(g, g)
    return k / k.sum()


def sample_elastic_field(
    rng: np.random.Generator, sigma: float, alpha: float, kernel_size: int = 21
) -> DisplacementField:
    """Uniform noise in [-1, 1] per pixel, smoothed over a zero-padded
    support by the separable Gaussian, scaled by alpha (dx drawn first)."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    k = gaussian_kernel_1d(sigma, kernel_size)
    fields = []
    for _ in range(2):
        noise = rng.uniform(-1.0, 1.0, size=(GRID, GRID))
        sm = convolve1d(noise, k, axis=0, mode="constant", cval=0.0)
        sm = convolve1d(sm, k, axis=1, mode="constant", cval=0.0)
        fields.append(alpha * sm)
    return DisplacementField(dx=fields[0], dy=fields[1])


def sample_affine(rng: np.random.Generator, params: DeformParams, digit: int) -> AffineSample:
    """Draw mode, angle, and scale factors (digits 1 and 7 get the reduced
    angle range). Draw order: mode, angle, gamma, sx, sy."""
    mode = "rotation" if rng.integers(0, 2) == 0 else "shear"
    beta = params.beta_reduced if digit in (1, 7) else params.beta_default
    angle = rng.uniform(-beta, beta)
    gamma = rng.uniform(*params.gamma_range)
    sx = rng.uniform(1.0 - gamma / 100.0, 1.0 + gamma / 100.0)
    sy = rng.uniform(1.0 - gamma / 100.0, 1.0 + gamma / 100.0)
    return AffineSample(mode=mode, angle=angle, sx=sx, sy=sy)


def compose_warp(affine: AffineSample, elastic: DisplacementField) -> DisplacementField:
    """Total per-pixel source offset: affine offset (scaling, then rotation
    or horizontal shear about the center pixel) plus the elastic field.

    Shear displaces horizontally by tan(angle) times the signed vertical
    distance from the center row.
    """
    rad = np.deg2rad(affine.angle)
    coords = np.arange(GRID, dtype=np.float64) - CENTER
    y = coords[:, None]  # vertical offset from center, rows
    x = coords[None, :]  # horizontal offset, columns
    xs = affine.sx * x
    ys = affine.sy * y
    if affine.mode == "rotation":
        c, s = np.cos(rad), np.sin(rad)
        xr = c * xs - s * ys
        yr = s * xs + c * ys
    else:
        xr = xs + np.tan(rad) * ys
        yr = ys
    dx = (xr - x) + elastic.dx
    dy = (yr - y) + elastic.dy
    return DisplacementField(dx=dx, dy=dy)


def warp_bilinear(img: np.ndarray, field: DisplacementField) -> np.ndarray:
    """Bilinear resample of img at p + field(p); out-of-image samples read
    -1.0; output clamped to [-1, 1] and returned as float32."""
    img = np.asarray(img, dtype=np.float32)
    rows = np.arange(GRID, dtype=np.float64)[:, None]
    cols = np.arange(GRID, dtype=np.float64)[None, :]
    sr = rows + field.dy
    sc = cols + field.dx
    if not (np.all(np.isfinite(sr)) and np.all(np.isfinite(sc))):
        raise ValueError("displacement field contains non-finite values")

    i0 = np.floor(sr).astype(np.int64)
    j0 = np.floor(sc).astype(np.int64)
    fr = sr - i0
    fc = sc - j0

    def corner(ii, jj):
        valid = (ii >= 0) & (ii < GRID) & (jj >= 0) & (jj < GRID)
        v = img[np.clip(ii, 0, GRID - 1), np.clip(jj, 0, GRID - 1)]
        return np.where(valid, v, BACKGROUND)

    v00 = corner(i0, j0)
    v01 = corner(i0, j0 + 1)
    v10 = corner(i0 + 1, j0)
    v11 = corner(i0 + 1, j0 + 1)
    out = ((1.0 - fr) * (1.0 - fc) * v00 + (1.0 - fr) * fc * v01
           + fr * (1.0 - fc) * v10 + fr * fc * v11)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def deform_image(
    rng: np.random.Generator, img: np.ndarray, digit: int, params: DeformParams
) -> np.ndarray:
    """Full pipeline for one image: upscale, draw sigma/alpha, elastic field,
    affine sample, compose, warp. Returns a float32 29x29 image in [-1, 1]."""
    up = upscale_28_to_29(img)
    sigma = rng.uniform(*params.sigma_range)
    alpha = rng.uniform(*params.alpha_range)
    elastic = sample_elastic_field(rng, sigma, alpha, params.kernel_size)
    affine = sample_affine(rng, params, digit)
    field = compose_warp(affine, elastic)
    return warp_bilinear(up, field)


def deform_epoch(
    train: Dataset,
    params: DeformParams,
    seed: int,
    epoch: int,
    lanes: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Fresh deformation of every training image for one epoch.

    Image i uses the substream (seed, STREAM_DEFORM, epoch, i); lanes only
    split the index range, so the result is byte-identical for any lane
    count. Returns (deformed (n, 29, 29) float32, labels) in input order.
    """
    n = len(train)
    images = train.images
    labels = train.labels
    out = np.empty((n, GRID, GRID), dtype=np.float32)

    def run(lo: int, hi: int):
        for i in range(lo, hi):
            g = substream(seed, STREAM_DEFORM, epoch, i)
            out[i] = deform_image(g, images[i], int(labels[i]), params)

    if lanes <= 1 or n < 2:
        run(0, n)
    else:
        chunk = max(64, (n + 4 * lanes - 1) // (4 * lanes))
        spans = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ThreadPoolExecutor(max_workers=lanes) as pool:
            list(pool.map(lambda span: run(*span), spans))
    return out, labels


def upscale_dataset(ds: Dataset) -> np.ndarray:
    """Un-deformed 29x29 network inputs for a whole split, flattened to
    (n, 841) float32 (validation/evaluation feed)."""
    n = len(ds)
    out = np.empty((n, GRID * GRID), dtype=np.float32)
    for i in range(n):
        out[i] = upscale_28_to_29(ds.images[i]).ravel()
    return out
