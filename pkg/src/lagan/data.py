"""Synthetic jet events and the binary dataset formats.

The generator is a controllable stand-in for a physics simulation, not a
physics model.  It produces two overlapping but separable classes:

* signal: two hard prongs whose energy split is solved so that the mass of
  the final preprocessed image hits a target drawn around the configured
  resonance mass, plus soft radiation smeared around both prongs;
* background: one hard core, a weak second prong, and broader radiation.

Events are built in the standardised frame (leading prong at the origin,
second prong at eta = 0, phi < 0 on a pixel centre) and then moved to a
random detector position by a random rotation about the jet axis and an
eta/phi shift.  Preprocessing undoes both, so the solved image mass
survives the round trip.  Each event draws from its own RNG stream derived
from (seed, label, index), so output does not depend on generation order.

File formats (little-endian throughout)::

    JIM1  magic "JIM1", u64 count, then per image: u8 label, u8 origin, 625 f64
    JEV1  magic "JEV1", u64 count, then per event: u8 label, u32 n,
          n x 3 f64 (pt, eta, phi), 2 f64 subjet1, u8 has_subjet2, 2 f64 subjet2
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from lagan.jet import (
    BACKGROUND,
    CENTER,
    CENTERS,
    ETA_GRID,
    GRID,
    LABEL_NAMES,
    ORIGIN_NAMES,
    PHI_GRID,
    SIGNAL,
    ImageSet,
    JetEvent,
    four_vectors,
    from_cartesian,
    wrap_phi,
)
from lagan.preprocess import pixelize_array

IMAGE_MAGIC = b"JIM1"
EVENT_MAGIC = b"JEV1"
FORMAT_VERSION = 1


class SyntheticConfigError(ValueError):
    """The requested kinematics cannot be produced."""


class DatasetFormatError(ValueError):
    """Base class for unreadable dataset files."""


class MagicMismatchError(DatasetFormatError):
    pass


class VersionMismatchError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


# ----------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic generator.

    ``prong_fraction`` is the mean energy share of the background's weak
    second prong (signal splits are solved from the mass target).
    ``dispersion`` is the Gaussian width of soft radiation around the
    prongs; ``soft_fraction`` and ``diffuse_fraction`` are the shares of
    the jet pt carried by smeared and by window-wide diffuse constituents.
    """

    label: int = SIGNAL
    pt_range: tuple[float, float] = (250.0, 300.0)
    resonance_mass: float = 80.0
    mass_width: float = 4.0
    prong_fraction: float = 0.1
    dispersion: float = 0.05
    soft_fraction: float = 0.12
    diffuse_fraction: float = 0.02
    constituent_count_range: tuple[int, int] = (25, 45)
    diffuse_count: int = 12
    psi_choices: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9, 1.0, 1.1)
    second_prong_weight: float = 0.4  # share of soft radiation attached to the second prong
    truncation_threshold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.pt_range
        if not 0 < lo <= hi < math.inf:
            raise SyntheticConfigError(f"pt_range must satisfy 0 < low <= high, got {self.pt_range}")
        if not 0.0 <= self.prong_fraction <= 1.0:
            raise SyntheticConfigError("prong_fraction must lie in [0, 1]")
        if self.label not in (SIGNAL, BACKGROUND):
            raise SyntheticConfigError(f"label must be {SIGNAL} or {BACKGROUND}")
        if self.dispersion < 0 or self.mass_width < 0:
            raise SyntheticConfigError("dispersion and mass_width must be non-negative")
        if not 0.0 <= self.soft_fraction + self.diffuse_fraction < 1.0:
            raise SyntheticConfigError("soft and diffuse fractions must leave pt for the prongs")
        a, b = self.constituent_count_range
        if not 0 <= a <= b:
            raise SyntheticConfigError("constituent_count_range must be an ordered pair of counts")
        for psi in self.psi_choices:
            if not 0 < psi <= 1.2 + 1e-9:
                raise SyntheticConfigError("second-prong angles must lie in (0, 1.2]")
        if self.label == SIGNAL:
            # two massless prongs carrying the whole jet reach at most pT * psi / 2
            reach = hi * max(self.psi_choices) / 2.0
            if self.resonance_mass <= 0 or self.resonance_mass > reach:
                raise SyntheticConfigError(
                    f"resonance mass {self.resonance_mass} GeV unreachable with pT <= {hi} GeV "
                    f"and opening angle <= {max(self.psi_choices)} (limit ~{reach:.1f} GeV)"
                )

    @classmethod
    def signal(cls, **kw) -> "SyntheticConfig":
        return cls(label=SIGNAL, **kw)

    @classmethod
    def background(cls, **kw) -> "SyntheticConfig":
        base = dict(
            label=BACKGROUND,
            dispersion=0.12,
            soft_fraction=0.2,
            constituent_count_range=(30, 55),
            psi_choices=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
            second_prong_weight=0.15,
        )
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def event_rng(seed: int, label: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(label), int(index)]))


def _pixel_phi(psi: float) -> float:
    """Pixel-centre phi nearest to -psi."""
    j = CENTER - int(round(psi / 0.1))
    return float(CENTERS[j])


def _soft(config: SyntheticConfig, rng, total_pt: float, prong2_phi: float):
    """Smeared radiation around the prongs plus a diffuse component, in the standard frame."""
    n = int(rng.integers(config.constituent_count_range[0], config.constituent_count_range[1] + 1))
    parent2 = rng.random(n) < config.second_prong_weight
    eta = rng.normal(0.0, 1.0, n) * config.dispersion
    phi = rng.normal(0.0, 1.0, n) * config.dispersion + np.where(parent2, prong2_phi, 0.0)
    w = rng.exponential(1.0, n)
    pt = w / w.sum() * config.soft_fraction * total_pt if n else w
    m = config.diffuse_count if config.diffuse_fraction > 0 else 0
    d_eta = rng.uniform(-1.2, 1.2, m)
    d_phi = rng.uniform(-1.2, 1.2, m)
    dw = rng.exponential(1.0, m)
    d_pt = dw / dw.sum() * config.diffuse_fraction * total_pt if m else dw
    return np.concatenate([pt, d_pt]), np.concatenate([eta, d_eta]), np.concatenate([phi, d_phi])


def _raw_pt_factor(eta, phi, angle):
    """pT of a unit-pT direction after the rotation by ``angle`` about the jet axis."""
    _, px, py, pz = four_vectors(1.0, eta, phi)
    return np.hypot(px, py * math.cos(angle) + pz * math.sin(angle))


def _image_sums(pixels: np.ndarray):
    return (
        float(np.sum(pixels)),
        float(np.sum(pixels * np.cos(PHI_GRID))),
        float(np.sum(pixels * np.sin(PHI_GRID))),
        float(np.sum(pixels * np.sinh(ETA_GRID))),
    )


def _solve_split(sums, hard_pt, prong2_phi: float, target: float) -> float | None:
    """Energy share z in (0, 0.5] of the second prong giving image mass ``target``.

    ``hard_pt(z)`` maps the share to the summed prong pT that keeps the raw
    jet pT fixed.  Returns None when the target is out of reach.
    """
    s0, c0, y0, z0 = sums
    c2, s2 = math.cos(prong2_phi), math.sin(prong2_phi)

    def mass2(z):
        h = hard_pt(z)
        e = s0 + h
        cx = c0 + h * ((1 - z) + z * c2)
        sy = y0 + h * (z * s2)
        return e * e - cx * cx - sy * sy - z0 * z0

    t2 = target * target
    lo, hi = 0.0, 0.5
    if mass2(lo) > t2 or mass2(hi) < t2:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass2(mid) < t2:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16:
            break
    return 0.5 * (lo + hi)


def synth_event(config: SyntheticConfig, rng: np.random.Generator) -> JetEvent:
    total = float(rng.uniform(*config.pt_range))
    angle = float(rng.uniform(-math.pi, math.pi))
    shift_eta = float(rng.uniform(-1.5, 1.5))
    shift_phi = float(rng.uniform(-math.pi, math.pi))

    if config.label == SIGNAL:
        target = config.resonance_mass
        if config.mass_width > 0:
            target = abs(float(rng.normal(config.resonance_mass, config.mass_width)))
        order = rng.permutation(len(config.psi_choices))
        for k in order:
            phi2 = _pixel_phi(config.psi_choices[k])
            pt, eta, phi = _soft(config, rng, total, phi2)
            soft_raw = float(np.sum(pt * _raw_pt_factor(eta, phi, angle)))
            r2 = float(_raw_pt_factor(0.0, phi2, angle))
            soft_img = pixelize_array(pt, eta, phi)
            keep = soft_img >= config.truncation_threshold
            keep[CENTER, CENTER] = True
            keep[CENTER, int(round((phi2 + 1.25) / 0.1 - 0.5))] = True
            sums = _image_sums(np.where(keep, soft_img, 0.0))

            def hard_pt(z, soft_raw=soft_raw, r2=r2):
                return (total - soft_raw) / ((1 - z) + z * r2)

            z = _solve_split(sums, hard_pt, phi2, target)
            if z is not None:
                break
        else:
            raise SyntheticConfigError(
                f"no opening angle in {config.psi_choices} reaches mass {target:.2f} GeV at pT {total:.1f} GeV"
            )
    else:
        phi2 = _pixel_phi(config.psi_choices[int(rng.integers(len(config.psi_choices)))])
        z = min(config.prong_fraction * float(rng.exponential(1.0)), 0.45)
        pt, eta, phi = _soft(config, rng, total, phi2)
        soft_raw = float(np.sum(pt * _raw_pt_factor(eta, phi, angle)))
        r2 = float(_raw_pt_factor(0.0, phi2, angle))
        hard = (total - soft_raw) / ((1 - z) + z * r2)

    if config.label == SIGNAL:
        hard = hard_pt(z)
    has_second = z > 0
    prong_pt = [hard * (1 - z)] + ([hard * z] if has_second else [])
    prong_phi = [0.0] + ([phi2] if has_second else [])
    pt = np.concatenate([prong_pt, pt])
    eta = np.concatenate([np.zeros(len(prong_pt)), eta])
    phi = np.concatenate([prong_phi, phi])

    # move to a random detector position: rotate about the jet axis, then shift
    _, px, py, pz = four_vectors(pt, eta, phi)
    c, s = math.cos(angle), math.sin(angle)
    r_pt, r_eta, r_phi = from_cartesian(px, py * c + pz * s, pz * c - py * s)
    r_eta = r_eta + shift_eta
    r_phi = wrap_phi(r_phi + shift_phi)
    kin = np.stack([r_pt, r_eta, r_phi], axis=1)
    sub1 = (shift_eta, wrap_phi(shift_phi))
    sub2 = (float(r_eta[1]), float(r_phi[1])) if has_second else None
    return JetEvent(kin, sub1, sub2, config.label)


def synth_events(config: SyntheticConfig, count: int, start: int = 0) -> list[JetEvent]:
    return [synth_event(config, event_rng(config.seed, config.label, start + k)) for k in range(count)]


def synth_mixed(count: int, seed: int = 0, signal: SyntheticConfig | None = None, background: SyntheticConfig | None = None):
    """Alternate signal and background events (even index signal)."""
    sig = replace(signal or SyntheticConfig.signal(), seed=seed)
    bkg = replace(background or SyntheticConfig.background(), seed=seed)
    out = []
    for k in range(count):
        cfg = sig if k % 2 == 0 else bkg
        out.append(synth_event(cfg, event_rng(seed, cfg.label, k // 2)))
    return out


# ----------------------------------------------------------------------------
# binary IO


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _check_magic(data: bytes, magic: bytes, path) -> None:
    if len(data) < 4:
        raise TruncatedFileError(f"{path}: file shorter than its 4-byte header")
    head = data[:4]
    if head == magic:
        return
    if head[:3] == magic[:3]:
        raise VersionMismatchError(
            f"{path}: format version {head[3:4].decode(errors='replace')!r} unsupported (expected {magic.decode()})"
        )
    raise MagicMismatchError(f"{path}: magic bytes {head!r} do not match {magic!r}")


_IMAGE_RECORD = np.dtype([("label", "u1"), ("origin", "u1"), ("pixels", "<f8", (GRID * GRID,))])


def encode_images(images: ImageSet) -> bytes:
    rec = np.empty(len(images), dtype=_IMAGE_RECORD)
    rec["label"] = images.labels
    rec["origin"] = images.origins
    rec["pixels"] = images.pixels.reshape(len(images), GRID * GRID)
    return IMAGE_MAGIC + struct.pack("<Q", len(images)) + rec.tobytes()


def decode_images(data: bytes, path="<bytes>") -> ImageSet:
    _check_magic(data, IMAGE_MAGIC, path)
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: missing image count")
    (count,) = struct.unpack_from("<Q", data, 4)
    need = 12 + count * _IMAGE_RECORD.itemsize
    if len(data) < need:
        raise TruncatedFileError(f"{path}: expected {count} images ({need} bytes), file has {len(data)} bytes")
    if len(data) > need:
        raise DatasetFormatError(f"{path}: {len(data) - need} trailing bytes after {count} images")
    rec = np.frombuffer(data, dtype=_IMAGE_RECORD, count=count, offset=12)
    return ImageSet(rec["pixels"].reshape(count, GRID, GRID).copy(), rec["label"].copy(), rec["origin"].copy())


def write_images(path, images: ImageSet, manifest: dict | None = None) -> None:
    _atomic_write(path, encode_images(images))
    write_manifest(path, images, manifest)


def read_images(path) -> ImageSet:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_images(data, path)


def encode_events(events) -> bytes:
    events = list(events)
    parts = [EVENT_MAGIC, struct.pack("<Q", len(events))]
    for ev in events:
        parts.append(struct.pack("<BI", ev.label, len(ev)))
        parts.append(np.ascontiguousarray(ev.kinematics, dtype="<f8").tobytes())
        sub2 = ev.subjet2 if ev.subjet2 is not None else (0.0, 0.0)
        parts.append(struct.pack("<2dB2d", *ev.subjet1, ev.subjet2 is not None, *sub2))
    return b"".join(parts)


def decode_events(data: bytes, path="<bytes>") -> list[JetEvent]:
    _check_magic(data, EVENT_MAGIC, path)
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: missing event count")
    (count,) = struct.unpack_from("<Q", data, 4)
    off = 12
    tail = struct.calcsize("<2dB2d")
    events = []
    try:
        for _ in range(count):
            label, n = struct.unpack_from("<BI", data, off)
            off += 5
            if off + 24 * n > len(data):
                raise struct.error("constituents run past end of file")
            kin = np.frombuffer(data, dtype="<f8", count=3 * n, offset=off).reshape(n, 3).astype(np.float64)
            off += 24 * n
            e1, p1, has2, e2, p2 = struct.unpack_from("<2dB2d", data, off)
            off += tail
            events.append(JetEvent(kin, (e1, p1), (e2, p2) if has2 else None, label))
    except struct.error as exc:
        raise TruncatedFileError(f"{path}: truncated after {len(events)} of {count} events") from exc
    if off != len(data):
        raise DatasetFormatError(f"{path}: {len(data) - off} trailing bytes after {count} events")
    return events


def write_events(path, events, manifest: dict | None = None) -> None:
    events = list(events)
    _atomic_write(path, encode_events(events))
    labels = np.array([ev.label for ev in events], dtype=np.uint8)
    write_manifest(path, ImageSet(np.zeros((0, GRID, GRID)), np.zeros(0)), manifest, labels=labels, kind="events")


def read_events(path) -> list[JetEvent]:
    with open(path, "rb") as fh:
        data = fh.read()
    return decode_events(data, path)


# ----------------------------------------------------------------------------
# manifest


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest")


def write_manifest(path, images: ImageSet, extra: dict | None = None, labels=None, kind: str = "images") -> None:
    """Plain-text ``key: value`` sidecar with per-(class, origin) counts and the generator digest."""
    lines = [
        f"format: {(IMAGE_MAGIC if kind == 'images' else EVENT_MAGIC).decode()}",
        f"version: {FORMAT_VERSION}",
        f"path: {Path(path).name}",
    ]
    if kind == "images":
        total = len(images)
        for lab, lname in LABEL_NAMES.items():
            for org, oname in ORIGIN_NAMES.items():
                c = int(np.count_nonzero((images.labels == lab) & (images.origins == org)))
                lines.append(f"count.{lname}.{oname}: {c}")
    else:
        total = len(labels)
        for lab, lname in LABEL_NAMES.items():
            lines.append(f"count.{lname}.real: {int(np.count_nonzero(labels == lab))}")
    lines.append(f"count.total: {total}")
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key}: {value}")
    _atomic_write(manifest_path(path), ("\n".join(lines) + "\n").encode())


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in manifest_path(path).read_text().splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            out[key] = value
    return out
