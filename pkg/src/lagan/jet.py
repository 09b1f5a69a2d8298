"""Jet domain types: constituents, events, 25x25 jet images and image collections.

Image layout is row-major with row ``i`` indexing the eta bin and column
``j`` the phi bin over [-1.25, 1.25]^2 at 0.1 resolution, so pixel (12, 12)
is centred on the origin.  When rendered, eta runs along the horizontal
axis; "left" and "right" therefore mean eta < 0 and eta > 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRID = 25
PIXEL = 0.1
HALF_WIDTH = 1.25
CENTER = GRID // 2

SIGNAL = 1
BACKGROUND = 0
REAL = 0
GENERATED = 1

LABEL_NAMES = {SIGNAL: "signal", BACKGROUND: "background"}
ORIGIN_NAMES = {REAL: "real", GENERATED: "generated"}

# pixel-centre coordinates, shared by every observable
CENTERS = -1.2 + PIXEL * np.arange(GRID)
ETA_GRID, PHI_GRID = np.meshgrid(CENTERS, CENTERS, indexing="ij")


def wrap_phi(phi):
    """Map azimuth onto (-pi, pi]."""
    wrapped = np.mod(np.asarray(phi, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def pixel_center(i: int, j: int) -> tuple[float, float]:
    """(eta, phi) of the centre of pixel (i, j)."""
    if not (0 <= i < GRID and 0 <= j < GRID):
        raise IndexError(f"pixel index ({i}, {j}) outside the {GRID}x{GRID} grid")
    return float(CENTERS[i]), float(CENTERS[j])


def pixel_index(eta, phi):
    """Bin index (i, j) containing (eta, phi); -1 when outside [-1.25, 1.25)."""
    i = np.floor((np.asarray(eta) + HALF_WIDTH) / PIXEL).astype(np.int64)
    j = np.floor((np.asarray(phi) + HALF_WIDTH) / PIXEL).astype(np.int64)
    inside = (i >= 0) & (i < GRID) & (j >= 0) & (j < GRID)
    return np.where(inside, i, -1), np.where(inside, j, -1)


@dataclass(frozen=True)
class Constituent:
    """A massless calorimeter deposit."""

    pt: float
    eta: float
    phi: float

    def __post_init__(self):
        if not self.pt >= 0.0:
            raise ValueError(f"constituent pt must be non-negative, got {self.pt}")
        object.__setattr__(self, "phi", wrap_phi(self.phi))

    @property
    def px(self) -> float:
        return self.pt * math.cos(self.phi)

    @property
    def py(self) -> float:
        return self.pt * math.sin(self.phi)

    @property
    def pz(self) -> float:
        return self.pt * math.sinh(self.eta)

    @property
    def energy(self) -> float:
        return self.pt * math.cosh(self.eta)


def four_vectors(pt, eta, phi) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(E, px, py, pz) of massless constituents."""
    pt = np.asarray(pt, dtype=np.float64)
    return pt * np.cosh(eta), pt * np.cos(phi), pt * np.sin(phi), pt * np.sinh(eta)


def from_cartesian(px, py, pz) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(pt, eta, phi) of massless momenta."""
    pt = np.hypot(px, py)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(pt > 0, np.arcsinh(np.divide(pz, pt, where=pt > 0, out=np.zeros_like(pt))), 0.0)
    return pt, eta, wrap_phi(np.arctan2(py, px))


@dataclass(frozen=True, eq=False)
class JetEvent:
    """Pre-clustered jet: constituent arrays plus subjet axes.

    ``kinematics`` is an [n, 3] array of (pt, eta, phi) rows.  ``subjet2`` is
    None when the jet has no resolved second subjet.
    """

    kinematics: np.ndarray
    subjet1: tuple[float, float]
    subjet2: tuple[float, float] | None
    label: int

    def __post_init__(self):
        k = np.array(self.kinematics, dtype=np.float64, copy=True).reshape(-1, 3)
        if k.shape[0] == 0:
            raise ValueError("a jet needs at least one constituent")
        if np.any(k[:, 0] < 0) or not np.all(np.isfinite(k)):
            raise ValueError("constituent pt must be finite and non-negative")
        k[:, 2] = wrap_phi(k[:, 2])
        k.setflags(write=False)
        object.__setattr__(self, "kinematics", k)
        object.__setattr__(self, "subjet1", (float(self.subjet1[0]), float(self.subjet1[1])))
        if self.subjet2 is not None:
            object.__setattr__(self, "subjet2", (float(self.subjet2[0]), float(self.subjet2[1])))
        if self.label not in (SIGNAL, BACKGROUND):
            raise ValueError(f"label must be {SIGNAL} (signal) or {BACKGROUND} (background)")

    @classmethod
    def from_constituents(cls, constituents, subjet1, subjet2, label) -> "JetEvent":
        return cls(np.array([[c.pt, c.eta, c.phi] for c in constituents]), subjet1, subjet2, label)

    @property
    def pt(self) -> np.ndarray:
        return self.kinematics[:, 0]

    @property
    def eta(self) -> np.ndarray:
        return self.kinematics[:, 1]

    @property
    def phi(self) -> np.ndarray:
        return self.kinematics[:, 2]

    @property
    def constituents(self) -> list[Constituent]:
        return [Constituent(*row) for row in self.kinematics]

    def __len__(self) -> int:
        return self.kinematics.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, JetEvent):
            return NotImplemented
        return (
            np.array_equal(self.kinematics, other.kinematics)
            and self.subjet1 == other.subjet1
            and self.subjet2 == other.subjet2
            and self.label == other.label
        )


@dataclass(frozen=True, eq=False)
class JetImage:
    """A 25x25 non-negative intensity grid (GeV) with class label and origin tag."""

    pixels: np.ndarray
    label: int = SIGNAL
    origin: int = REAL

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64, copy=True)
        if p.shape != (GRID, GRID):
            raise ValueError(f"jet images are {GRID}x{GRID}, got {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("pixel intensities must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, JetImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels) and (self.label, self.origin) == (other.label, other.origin)


def occupancy(image, threshold: float = 0.0) -> float:
    """Fraction of pixels with intensity strictly above ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    pixels = image.pixels if isinstance(image, JetImage) else np.asarray(image)
    return float(np.count_nonzero(pixels > threshold)) / pixels.size


@dataclass(eq=False)
class ImageSet:
    """A batch of jet images stored as one [N, 25, 25] array with per-image tags."""

    pixels: np.ndarray
    labels: np.ndarray
    origins: np.ndarray = field(default=None)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64).reshape(-1, GRID, GRID)
        n = self.pixels.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(n)
        if self.origins is None:
            self.origins = np.full(n, REAL, dtype=np.uint8)
        self.origins = np.asarray(self.origins, dtype=np.uint8).reshape(n)

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def __getitem__(self, idx) -> JetImage:
        return JetImage(self.pixels[idx], int(self.labels[idx]), int(self.origins[idx]))

    def subset(self, mask_or_index) -> "ImageSet":
        return ImageSet(self.pixels[mask_or_index], self.labels[mask_or_index], self.origins[mask_or_index])

    def of_class(self, label: int) -> "ImageSet":
        return self.subset(self.labels == label)

    @classmethod
    def from_images(cls, images) -> "ImageSet":
        images = list(images)
        if not images:
            return cls(np.zeros((0, GRID, GRID)), np.zeros(0))
        return cls(
            np.stack([im.pixels for im in images]),
            [im.label for im in images],
            [im.origin for im in images],
        )

    @classmethod
    def concat(cls, sets) -> "ImageSet":
        sets = list(sets)
        return cls(
            np.concatenate([s.pixels for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.origins for s in sets]),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageSet):
            return NotImplemented
        return (
            np.array_equal(self.pixels, other.pixels)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.origins, other.origins)
        )
