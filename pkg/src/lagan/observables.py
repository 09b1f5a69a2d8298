"""Jet observables computed directly from pixel intensities.

Pixels are treated as massless particles at their bin centres.  ``image_pt``
and ``image_mass`` follow the image-level formulas

    pT^2 = (sum I cos phi)^2 + (sum I sin phi)^2
    m^2  = (sum I)^2 - pT^2 - (sum I sinh eta)^2

where the total intensity stands in for the energy.  That expression can go
slightly negative; such values clamp to zero and are counted in
``MASS_DIAGNOSTICS``.  n-subjettiness uses axes from one pass of exclusive kt
clustering with winner-take-all recombination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lagan.jet import CENTERS, ETA_GRID, GRID, PHI_GRID, JetImage

R0 = 1.0


class InsufficientConstituentsError(ValueError):
    """Fewer nonzero pixels than requested axes."""


class UndefinedObservableError(ValueError):
    """Observable has no value for this image (e.g. all-zero, or tau1 = 0)."""


@dataclass
class MassDiagnostics:
    clamped: int = 0

    def reset(self) -> None:
        self.clamped = 0


MASS_DIAGNOSTICS = MassDiagnostics()

_COS_PHI = np.cos(PHI_GRID)
_SIN_PHI = np.sin(PHI_GRID)
_SINH_ETA = np.sinh(ETA_GRID)


def _as_pixels(image) -> np.ndarray:
    return image.pixels if isinstance(image, JetImage) else np.asarray(image, dtype=np.float64)


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def image_pt(image):
    """Transverse momentum of an image, or of every image in an [..., 25, 25] stack."""
    p = _as_pixels(image)
    cx = np.sum(p * _COS_PHI, axis=(-2, -1))
    sy = np.sum(p * _SIN_PHI, axis=(-2, -1))
    return _scalar(np.sqrt(cx * cx + sy * sy))


def image_mass_squared(image):
    p = _as_pixels(image)
    total = np.sum(p, axis=(-2, -1))
    cx = np.sum(p * _COS_PHI, axis=(-2, -1))
    sy = np.sum(p * _SIN_PHI, axis=(-2, -1))
    zs = np.sum(p * _SINH_ETA, axis=(-2, -1))
    return _scalar(total * total - cx * cx - sy * sy - zs * zs)


def image_mass(image, diagnostics: MassDiagnostics = MASS_DIAGNOSTICS):
    """Invariant mass from the image formula; negative m^2 clamps to 0 and is counted."""
    m2 = np.asarray(image_mass_squared(image))
    negative = m2 < 0
    diagnostics.clamped += int(np.count_nonzero(negative))
    return _scalar(np.sqrt(np.where(negative, 0.0, m2)))


# ----------------------------------------------------------------------------
# n-subjettiness


def _particles(pixels: np.ndarray):
    i, j = np.nonzero(pixels > 0)
    return pixels[i, j], CENTERS[i], CENTERS[j]


def kt_axes(pt, eta, phi, n_values=(1, 2)) -> dict[int, np.ndarray]:
    """Exclusive kt clustering with winner-take-all merging, recording the axes at each requested n.

    Distance d_ij = min(pt_i^2, pt_j^2) * dR_ij^2 / R0^2.  The closest pair
    merges (ties go to the lowest flattened (i, j) index); the merged cluster
    takes the direction of the harder member (the lower index on equal pt)
    and the summed pt.  There is no beam distance and no iteration.
    """
    pt = np.array(pt, dtype=np.float64)
    eta = np.array(eta, dtype=np.float64)
    phi = np.array(phi, dtype=np.float64)
    k = pt.size
    wanted = sorted(set(n_values))
    if k < wanted[0]:
        raise InsufficientConstituentsError(f"{k} particles cannot define {wanted[0]} axes")
    out: dict[int, np.ndarray] = {}
    active = np.ones(k, dtype=bool)
    pt2 = pt * pt
    dr2 = (eta[:, None] - eta[None, :]) ** 2 + (phi[:, None] - phi[None, :]) ** 2
    d = np.minimum(pt2[:, None], pt2[None, :]) * dr2 / (R0 * R0)
    np.fill_diagonal(d, np.inf)
    remaining = k
    while True:
        if remaining in wanted:
            out[remaining] = np.stack([eta[active], phi[active]], axis=1)
        if remaining <= wanted[0]:
            break
        flat = int(np.argmin(d))
        a, b = divmod(flat, k)
        if a > b:
            a, b = b, a
        # winner-take-all: survivor keeps the harder direction
        if pt[b] > pt[a]:
            eta[a], phi[a] = eta[b], phi[b]
        pt[a] += pt[b]
        active[b] = False
        d[b, :] = np.inf
        d[:, b] = np.inf
        row = np.minimum(pt[a] ** 2, pt[active] ** 2) * (
            (eta[a] - eta[active]) ** 2 + (phi[a] - phi[active]) ** 2
        ) / (R0 * R0)
        d[a, active] = row
        d[active, a] = row
        d[a, a] = np.inf
        remaining -= 1
    return out


def find_axes(image, n: int) -> np.ndarray:
    """[n, 2] array of (eta, phi) axes for the nonzero pixels of ``image``."""
    if n not in (1, 2):
        raise ValueError("axes are defined for n = 1 or 2")
    pt, eta, phi = _particles(_as_pixels(image))
    if pt.size < n:
        raise InsufficientConstituentsError(f"image has {pt.size} nonzero pixels, need {n}")
    if pt.size == n:
        return np.stack([eta, phi], axis=1)
    return kt_axes(pt, eta, phi, (n,))[n]


def tau_from_axes(image, axes) -> float:
    """sum_i I_i min_a dR(i, a) / (sum_i I_i * R0)."""
    p = _as_pixels(image)
    total = float(np.sum(p))
    if total <= 0:
        raise UndefinedObservableError("n-subjettiness of an all-zero image")
    axes = np.asarray(axes, dtype=np.float64).reshape(-1, 2)
    dr = np.sqrt((ETA_GRID[..., None] - axes[:, 0]) ** 2 + (PHI_GRID[..., None] - axes[:, 1]) ** 2)
    return float(np.sum(p * np.min(dr, axis=-1)) / (total * R0))


def tau_n(image, n: int) -> float:
    p = _as_pixels(image)
    if not np.any(p > 0):
        raise UndefinedObservableError("n-subjettiness of an all-zero image")
    return tau_from_axes(p, find_axes(p, n))


def tau21(image) -> float:
    p = _as_pixels(image)
    t1 = tau_n(p, 1)
    if t1 <= 0:
        raise UndefinedObservableError("tau21 undefined: tau1 = 0")
    if np.count_nonzero(p > 0) < 2:
        return 0.0
    return tau_n(p, 2) / t1


@dataclass(frozen=True)
class ObservableSet:
    pt: float
    mass: float
    tau1: float
    tau2: float
    tau21: float  # nan when tau1 = 0


def observables(image) -> ObservableSet:
    p = _as_pixels(image)
    return _observables_row(p, MASS_DIAGNOSTICS)


def _observables_row(p: np.ndarray, diagnostics) -> ObservableSet:
    pt = image_pt(p)
    mass = image_mass(p, diagnostics)
    particles = _particles(p)
    k = particles[0].size
    if k == 0:
        return ObservableSet(pt, mass, np.nan, np.nan, np.nan)
    if k == 1:
        return ObservableSet(pt, mass, 0.0, 0.0, np.nan)
    axes = kt_axes(*particles, (1, 2)) if k > 2 else {1: kt_axes(*particles, (1,))[1], 2: np.stack(particles[1:], 1)}
    t1 = tau_from_axes(p, axes[1])
    t2 = tau_from_axes(p, axes[2])
    return ObservableSet(pt, mass, t1, t2, t2 / t1 if t1 > 0 else np.nan)


@dataclass
class ObservableTable:
    pt: np.ndarray
    mass: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    tau21: np.ndarray
    clamped_mass: int = 0

    def __len__(self) -> int:
        return self.pt.size


def observable_table(images) -> ObservableTable:
    """Observables for every image of an [N, 25, 25] stack (or ImageSet)."""
    pixels = images.pixels if hasattr(images, "pixels") else np.asarray(images, dtype=np.float64)
    pixels = pixels.reshape(-1, GRID, GRID)
    diag = MassDiagnostics()
    rows = [_observables_row(p, diag) for p in pixels]
    cols = {name: np.array([getattr(r, name) for r in rows], dtype=np.float64) for name in ObservableSet.__dataclass_fields__}
    MASS_DIAGNOSTICS.clamped += diag.clamped
    return ObservableTable(**cols, clamped_mass=diag.clamped)


def pixel_intensity_histogram(images, bins=None, threshold: float = 1e-3, n_bins: int = 50):
    """Histogram of all pixel intensities at or above ``threshold`` on log-spaced bins.

    Default edges span ``threshold`` to the dataset maximum.  Returns
    (counts, edges).
    """
    pixels = images.pixels if hasattr(images, "pixels") else np.asarray(images, dtype=np.float64)
    values = pixels[pixels >= threshold] if pixels.size else np.zeros(0)
    if bins is None:
        top = float(values.max()) if values.size else threshold * 10
        top = max(top, threshold * 10)
        bins = np.logspace(np.log10(threshold), np.log10(top), n_bins + 1)
        bins[-1] = top
    edges = np.asarray(bins, dtype=np.float64)
    counts, _ = np.histogram(values, bins=edges)
    return counts, edges
