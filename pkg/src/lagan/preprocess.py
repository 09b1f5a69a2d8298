"""From jet events to standardised jet images.

Pipeline order: translate -> rotate -> pixelize -> parity flip -> truncate.
Rotation either acts on the constituent four-vectors (a proper rotation
about the jet axis, exact up to rounding) or on the pixelized image (bicubic
resampling, optionally renormalised to conserve the pixel sum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lagan.jet import (
    CENTER,
    GRID,
    ImageSet,
    JetEvent,
    JetImage,
    four_vectors,
    from_cartesian,
    pixel_index,
    wrap_phi,
)

ROTATION_MODES = ("constituent", "image_cubic", "none")


class DegenerateAxisError(ValueError):
    """The rotation reference direction coincides with the jet axis."""


@dataclass(frozen=True)
class PreprocessConfig:
    rotation_mode: str = "constituent"
    renormalize_after_rotation: bool = True
    truncation_threshold: float = 1e-3

    def __post_init__(self):
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation_mode must be one of {ROTATION_MODES}, got {self.rotation_mode!r}")
        if not self.truncation_threshold >= 0:
            raise ValueError("truncation_threshold must be non-negative")


# ----------------------------------------------------------------------------
# constituent space


def translate(event: JetEvent) -> JetEvent:
    """Shift every constituent so the leading subjet sits at (0, 0)."""
    eta0, phi0 = event.subjet1
    k = event.kinematics.copy()
    k[:, 1] -= eta0
    k[:, 2] = wrap_phi(k[:, 2] - phi0)
    sub2 = None
    if event.subjet2 is not None:
        sub2 = (event.subjet2[0] - eta0, wrap_phi(event.subjet2[1] - phi0))
    return JetEvent(k, (0.0, 0.0), sub2, event.label)


def principal_direction(event: JetEvent) -> tuple[float, float]:
    """Leading eigenvector of the pt-weighted (eta, phi) second-moment matrix about the origin.

    The sign is chosen so the vector points into the half-plane holding more pt.
    """
    w = event.pt
    x = np.stack([event.eta, event.phi])
    cov = (x * w) @ x.T
    vals, vecs = np.linalg.eigh(cov)
    v = vecs[:, np.argmax(vals)]
    if np.sum(w[(v @ x) > 0]) < np.sum(w[(v @ x) < 0]):
        v = -v
    return float(v[0]), float(v[1])


def rotation_angle(reference: tuple[float, float]) -> float:
    """Angle beta of the rotation about the jet (x) axis that sends ``reference`` to azimuth -pi/2.

    ``reference`` is an (eta, phi) direction in the translated frame.  The
    two-argument arctangent keeps the result correct for either sign of pz.
    """
    eta, phi = reference
    py, pz = math.sin(phi), math.sinh(eta)
    if py == 0.0 and pz == 0.0:
        raise DegenerateAxisError("reference subjet lies on the jet axis; rotation undefined")
    return -math.atan2(py, pz) - math.pi / 2


def _rotate_x(px, py, pz, beta):
    c, s = math.cos(beta), math.sin(beta)
    return px, py * c + pz * s, pz * c - py * s


def rotate_constituents(event: JetEvent) -> JetEvent:
    """Proper rotation about the x axis putting the subleading subjet at (0, phi<0).

    Energies and px are unchanged; (pt, eta, phi) are recomputed from the
    rotated momenta.  Without a second subjet the principal axis of the
    constituent cloud is used as the reference direction.
    """
    ref = event.subjet2 if event.subjet2 is not None else principal_direction(event)
    beta = rotation_angle(ref)
    _, px, py, pz = four_vectors(event.pt, event.eta, event.phi)
    k = np.stack(from_cartesian(*_rotate_x(px, py, pz, beta)), axis=1)
    sub2 = None
    if event.subjet2 is not None:
        eta2, phi2 = event.subjet2
        # rotate a unit-pt probe along the subjet direction
        _, sx, sy, sz = four_vectors(1.0, eta2, phi2)
        _, e, p = from_cartesian(*_rotate_x(np.array(sx), np.array(sy), np.array(sz), beta))
        sub2 = (float(e), float(p))
    return JetEvent(k, event.subjet1, sub2, event.label)


def pixelize(event: JetEvent, label: int | None = None, origin: int = 0) -> JetImage:
    """Sum constituent pt per 0.1 x 0.1 cell; constituents outside the window are dropped."""
    return JetImage(pixelize_array(event.pt, event.eta, event.phi), event.label if label is None else label, origin)


def pixelize_array(pt, eta, phi) -> np.ndarray:
    i, j = pixel_index(eta, phi)
    keep = i >= 0
    grid = np.zeros((GRID, GRID))
    np.add.at(grid, (i[keep], j[keep]), np.asarray(pt)[keep])
    return grid


# ----------------------------------------------------------------------------
# image space


def _catmull_rom(t: np.ndarray) -> np.ndarray:
    """Weights of the four taps at offsets -1, 0, 1, 2 for fractional position t (a = -0.5)."""
    t2, t3 = t * t, t * t * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ]
    )


def _pixels(image) -> tuple[np.ndarray, int, int]:
    if isinstance(image, JetImage):
        return image.pixels, image.label, image.origin
    return np.asarray(image, dtype=np.float64), None, None


def _rewrap(pixels, label, origin, like):
    if isinstance(like, JetImage):
        return JetImage(pixels, label, origin)
    return pixels


def rotate_image_cubic(image, angle: float, renormalize: bool = True):
    """Rotate the image by ``angle`` (counter-clockwise in the eta-phi plane) about the central pixel.

    Each output pixel samples the input at the inversely rotated position
    with a separable Catmull-Rom kernel; taps beyond the border read the
    nearest edge pixel, and sample positions more than half a pixel outside
    the grid give zero.  Negative interpolation overshoot is clamped to 0.
    With ``renormalize`` the output is rescaled so its pixel sum (as
    ``math.fsum``) equals the input's exactly.
    """
    pixels, label, origin = _pixels(image)
    n = pixels.shape[0]
    c = (n - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(n) - c, np.arange(n) - c, indexing="ij")
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    # output (eta, phi) -> source position under the inverse rotation
    src_i = cos_a * ii + sin_a * jj + c
    src_j = -sin_a * ii + cos_a * jj + c
    # snap rounding noise so axis-aligned rotations stay exact
    src_i = np.where(np.abs(src_i - np.round(src_i)) < 1e-9, np.round(src_i), src_i)
    src_j = np.where(np.abs(src_j - np.round(src_j)) < 1e-9, np.round(src_j), src_j)
    inside = (src_i > -0.5) & (src_i < n - 0.5) & (src_j > -0.5) & (src_j < n - 0.5)

    i0 = np.floor(src_i).astype(np.int64)
    j0 = np.floor(src_j).astype(np.int64)
    wi = _catmull_rom(src_i - i0)
    wj = _catmull_rom(src_j - j0)
    out = np.zeros_like(src_i)
    for a in range(4):
        ri = np.clip(i0 + a - 1, 0, n - 1)
        for b in range(4):
            rj = np.clip(j0 + b - 1, 0, n - 1)
            out += wi[a] * wj[b] * pixels[ri, rj]
    out = np.where(inside, np.maximum(out, 0.0), 0.0)
    if renormalize:
        out = renormalize_sum(out, math.fsum(pixels.reshape(-1)))
    return _rewrap(out, label, origin, image)


def renormalize_sum(pixels: np.ndarray, target: float) -> np.ndarray:
    """Rescale non-negative ``pixels`` so their correctly rounded sum equals ``target``.

    The sum is taken with ``math.fsum`` (exact, then rounded once), which
    makes "the pixel sum" independent of summation order.  After the
    multiplicative rescale the remaining few-ulp residual goes into the
    brightest pixel; its ulp never exceeds the target's, so the exact sum
    can always be brought within half an ulp of ``target``.
    """
    out = np.array(pixels, dtype=np.float64)
    flat = out.reshape(-1)
    total = math.fsum(flat)
    if total <= 0.0:
        return out
    out *= target / total
    k = int(np.argmax(flat))
    for _ in range(64):
        residual = target - math.fsum(flat)
        if residual == 0.0:
            break
        moved = flat[k] + residual
        if moved == flat[k]:
            moved = np.nextafter(flat[k], np.inf if residual > 0 else -np.inf)
        flat[k] = max(moved, 0.0)
    return out


def left_right_energy(pixels: np.ndarray) -> tuple[float, float]:
    """Summed intensity for eta < 0 (rows above centre) and eta > 0; the central row is excluded."""
    return float(np.sum(pixels[:CENTER])), float(np.sum(pixels[CENTER + 1 :]))


def parity_flip(image):
    """Mirror eta (reverse rows) when the eta < 0 half carries more intensity than the eta > 0 half.

    Mirroring eta keeps a subjet placed at eta = 0, phi < 0 in place.  The
    result always has right >= left, so the operation is idempotent.
    """
    pixels, label, origin = _pixels(image)
    left, right = left_right_energy(pixels)
    if left > right:
        pixels = pixels[::-1, :].copy()
    return _rewrap(pixels, label, origin, image)


def truncate_low_intensity(image, threshold: float = 1e-3):
    """Zero every pixel below ``threshold``."""
    if not threshold >= 0:
        raise ValueError("threshold must be non-negative")
    pixels, label, origin = _pixels(image)
    return _rewrap(np.where(pixels < threshold, 0.0, pixels), label, origin, image)


# ----------------------------------------------------------------------------
# full pipeline


@dataclass(frozen=True)
class PipelineResult:
    image: JetImage
    subjet2: tuple[float, float] | None  # subleading subjet in the final image frame
    flipped: bool
    rotation_angle: float


def run_pipeline(event: JetEvent, config: PreprocessConfig = PreprocessConfig()) -> PipelineResult:
    ev = translate(event)
    angle = 0.0
    if config.rotation_mode == "constituent":
        ref = ev.subjet2 if ev.subjet2 is not None else principal_direction(ev)
        angle = rotation_angle(ref)
        ev = rotate_constituents(ev)
        pixels = pixelize_array(ev.pt, ev.eta, ev.phi)
    else:
        pixels = pixelize_array(ev.pt, ev.eta, ev.phi)
        if config.rotation_mode == "image_cubic":
            ref = ev.subjet2 if ev.subjet2 is not None else principal_direction(ev)
            angle = -math.pi / 2 - math.atan2(ref[1], ref[0])
            pixels = rotate_image_cubic(pixels, angle, config.renormalize_after_rotation)
            if ev.subjet2 is not None:
                r = math.hypot(*ev.subjet2)
                ev = JetEvent(ev.kinematics, ev.subjet1, (0.0, -r), ev.label)
    left, right = left_right_energy(pixels)
    flipped = left > right
    if flipped:
        pixels = pixels[::-1, :].copy()
    pixels = np.where(pixels < config.truncation_threshold, 0.0, pixels)
    sub2 = ev.subjet2
    if sub2 is not None and flipped:
        sub2 = (-sub2[0], sub2[1])
    return PipelineResult(JetImage(pixels, event.label), sub2, flipped, angle)


def preprocess_events(events, config: PreprocessConfig = PreprocessConfig()) -> ImageSet:
    events = list(events)
    n = len(events)
    pixels = np.zeros((n, GRID, GRID))
    labels = np.zeros(n, dtype=np.uint8)
    for k, ev in enumerate(events):
        res = run_pipeline(ev, config)
        pixels[k] = res.image.pixels
        labels[k] = ev.label
    return ImageSet(pixels, labels)


# ----------------------------------------------------------------------------
# information loss


@dataclass(frozen=True)
class RocCurve:
    signal_efficiency: np.ndarray  # fraction of ``before`` above each threshold
    background_efficiency: np.ndarray  # fraction of ``after`` above each threshold
    auc: float
    degenerate: bool

    @property
    def inverse_background_efficiency(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.background_efficiency

    def rows(self):
        """(threshold index, signal eff, background eff, 1/background eff) rows for CSV export."""
        inv = self.inverse_background_efficiency
        return [
            (k, float(s), float(b), float(v))
            for k, (s, b, v) in enumerate(zip(self.signal_efficiency, self.background_efficiency, inv))
        ]


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    _, first, counts = np.unique(sorted_v, return_index=True, return_counts=True)
    avg = first + (counts + 1) / 2.0  # 1-based average rank of each tie group
    ranks = np.empty(len(values))
    ranks[order] = np.repeat(avg, counts)
    return ranks


def roc_info_loss(before, after) -> RocCurve:
    """ROC of ``before`` (positive class) against ``after``.

    The AUC equals P(X > Y) + P(X = Y)/2 for X drawn from ``before`` and Y
    from ``after``; 0.5 means the transformation lost no information about
    the quantity.  A curve where either sample is single-valued is flagged
    as degenerate.
    """
    x = np.asarray(before, dtype=np.float64).ravel()
    y = np.asarray(after, dtype=np.float64).ravel()
    if x.size == 0 or y.size == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([x, y])
    ranks = _midranks(pooled)
    auc = (np.sum(ranks[: x.size]) - x.size * (x.size + 1) / 2.0) / (x.size * y.size)
    thresholds = np.concatenate([[np.inf], np.unique(pooled)[::-1]])
    xs, ys = np.sort(x), np.sort(y)
    sig = (x.size - np.searchsorted(xs, thresholds, side="left")) / x.size
    bkg = (y.size - np.searchsorted(ys, thresholds, side="left")) / y.size
    degenerate = bool(np.ptp(x) == 0 or np.ptp(y) == 0)
    return RocCurve(sig, bkg, float(auc), degenerate)
