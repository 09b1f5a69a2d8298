"""Model assessment: EMD minimax score over (mass, tau21) PMFs and image-level diagnostics."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from lagan.emd import emd
from lagan.jet import BACKGROUND, GENERATED, GRID, LABEL_NAMES, SIGNAL, ImageSet
from lagan.nn import ops
from lagan.nn.tensor import Tensor, no_grad
from lagan.observables import ObservableTable, observable_table

PMF_BINS = 40


class EmptyPmfError(ValueError):
    """No sample falls inside the PMF window."""


class ScoreConfigError(ValueError):
    """Datasets cannot be scored against each other (e.g. a class is missing)."""


@dataclass(frozen=True)
class Window:
    m_min: float
    m_max: float
    tau_min: float
    tau_max: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.m_min, self.m_max, self.tau_min, self.tau_max)


@dataclass(frozen=True)
class PmfGrid:
    bins: np.ndarray  # [bins, bins], mass axis first
    window: Window
    n_samples: int
    clipped: int  # samples outside the window, assigned to edge bins


def pooled_window(*samples) -> Window:
    """Smallest window containing every (m, tau21) row of every sample array."""
    rows = np.concatenate([np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in samples])
    if rows.size == 0:
        raise EmptyPmfError("cannot build a window from no samples")
    return Window(float(rows[:, 0].min()), float(rows[:, 0].max()), float(rows[:, 1].min()), float(rows[:, 1].max()))


def _bin_index(x: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    width = hi - lo
    if width <= 0:
        return np.zeros(x.shape, dtype=np.int64)
    idx = np.floor((x - lo) / width * n).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def build_pmf(samples, window: Window, bins: int = PMF_BINS) -> PmfGrid:
    """Equispaced 2D histogram of (m, tau21) rows normalised to unit mass.

    The upper window edge belongs to the last bin.  Out-of-window samples
    are clipped to the nearest edge bin and counted in ``clipped``.
    """
    s = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    lo_m, hi_m, lo_t, hi_t = window.as_tuple()
    if s.shape[0] == 0:
        raise EmptyPmfError("cannot build a PMF from zero samples")
    inside = (s[:, 0] >= lo_m) & (s[:, 0] <= hi_m) & (s[:, 1] >= lo_t) & (s[:, 1] <= hi_t)
    i = _bin_index(s[:, 0], lo_m, hi_m, bins)
    j = _bin_index(s[:, 1], lo_t, hi_t, bins)
    grid = np.zeros((bins, bins))
    np.add.at(grid, (i, j), 1.0)
    return PmfGrid(grid / s.shape[0], window, int(s.shape[0]), int(np.count_nonzero(~inside)))


@dataclass
class ScoreReport:
    per_class_emd: dict[str, float]
    sigma: float
    sample_sizes: dict[str, dict[str, int]]
    window: tuple[float, float, float, float]
    excluded: dict[str, int] = field(default_factory=dict)  # images with undefined tau21
    bins: int = PMF_BINS

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def observable_pairs(table: ObservableTable) -> tuple[np.ndarray, np.ndarray]:
    """(m, tau21) rows with tau21 defined, and the boolean mask that selected them."""
    ok = np.isfinite(table.tau21) & np.isfinite(table.mass)
    return np.stack([table.mass[ok], table.tau21[ok]], axis=1), ok


def minimax_score(
    real: ImageSet,
    generated: ImageSet,
    bins: int = PMF_BINS,
    real_table: ObservableTable | None = None,
    generated_table: ObservableTable | None = None,
    window: Window | None = None,
) -> ScoreReport:
    """sigma = max over classes of EMD(real PMF | class, generated PMF | class).

    Both datasets must hold both classes.  The (m, tau21) window defaults to
    the pooled extent of both datasets; pass ``window`` to hold it fixed
    (samples outside are clipped to the edge bins).  EMDs are in grid-index
    units.
    """
    for name, ds in (("real", real), ("generated", generated)):
        missing = [LABEL_NAMES[c] for c in (SIGNAL, BACKGROUND) if not np.any(ds.labels == c)]
        if missing:
            raise ScoreConfigError(f"{name} dataset lacks class(es): {', '.join(missing)}")
    rt = real_table if real_table is not None else observable_table(real)
    gt = generated_table if generated_table is not None else observable_table(generated)
    r_pairs, r_ok = observable_pairs(rt)
    g_pairs, g_ok = observable_pairs(gt)
    if window is None:
        window = pooled_window(r_pairs, g_pairs)
    r_lab, g_lab = real.labels[r_ok], generated.labels[g_ok]
    per_class, sizes = {}, {}
    for c in (SIGNAL, BACKGROUND):
        name = LABEL_NAMES[c]
        p = build_pmf(r_pairs[r_lab == c], window, bins)
        q = build_pmf(g_pairs[g_lab == c], window, bins)
        per_class[name] = emd(p.bins, q.bins)
        sizes[name] = {"real": p.n_samples, "generated": q.n_samples}
    excluded = {"real": int(np.count_nonzero(~r_ok)), "generated": int(np.count_nonzero(~g_ok))}
    return ScoreReport(per_class, max(per_class.values()), sizes, window.as_tuple(), excluded, bins)


# ----------------------------------------------------------------------------
# image-level diagnostics


def _stack(images) -> np.ndarray:
    return images.pixels if isinstance(images, ImageSet) else np.asarray(images, dtype=np.float64).reshape(-1, GRID, GRID)


def select(images: ImageSet, label: int | None = None, origin: int | None = None, scores=None, quantile=None) -> ImageSet:
    """Filter by label, origin, and optionally keep images whose score is at or above the given quantile."""
    mask = np.ones(len(images), dtype=bool)
    if label is not None:
        mask &= images.labels == label
    if origin is not None:
        mask &= images.origins == origin
    if quantile is not None:
        s = np.asarray(scores, dtype=np.float64)
        mask &= s >= np.quantile(s[mask], quantile) if np.any(mask) else False
    return images.subset(mask)


def average_image(images) -> np.ndarray:
    p = _stack(images)
    if p.shape[0] == 0:
        raise ValueError("cannot average an empty image subset")
    return p.mean(axis=0)


def top_k_by(scores, k: int = 500) -> np.ndarray:
    """Indices of the ``k`` highest scores; equal scores keep input order."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if k > s.size:
        raise ValueError(f"k = {k} exceeds the {s.size} available images")
    return np.argsort(-s, kind="stable")[:k]


def nearest_generated_neighbor(real, generated) -> tuple[int, np.ndarray, float]:
    """(index, image, Euclidean distance) of the generated image closest to ``real``."""
    g = _stack(generated)
    if g.shape[0] == 0:
        raise ValueError("generated set is empty")
    r = np.asarray(real.pixels if hasattr(real, "pixels") else real, dtype=np.float64).reshape(GRID, GRID)
    d2 = np.sum((g - r) ** 2, axis=(1, 2))
    k = int(np.argmin(d2))
    return k, g[k], float(np.sqrt(d2[k]))


def confusion_matrix(p, truth, threshold: float = 0.5) -> np.ndarray:
    """Row-normalised 2x2 matrix: rows are true (background, signal), columns predicted."""
    p = np.asarray(p, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel().astype(np.int64)
    if p.size == 0:
        raise ValueError("no predictions")
    pred = (p >= threshold).astype(np.int64)
    m = np.zeros((2, 2))
    np.add.at(m, (t, pred), 1.0)
    rows = m.sum(axis=1, keepdims=True)
    return np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)


def conditional_response_map(values, responses, value_bins, response_bins):
    """2D histogram [response bin, value bin] with each non-empty value column summing to 1.

    Returns (map, indices of empty value columns).
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    r = np.asarray(responses, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no data")
    h, _, _ = np.histogram2d(r, v, bins=[response_bins, value_bins])
    cols = h.sum(axis=0, keepdims=True)
    empty = np.flatnonzero(cols.ravel() == 0)
    return np.divide(h, cols, out=np.zeros_like(h), where=cols > 0), empty


def pixel_output_correlation(images, outputs) -> tuple[np.ndarray, int]:
    """Per-pixel Pearson correlation between intensity and a per-image output.

    Pixels with zero variance (or a constant output) get 0; the number of
    such degenerate entries is returned alongside the map.
    """
    p = _stack(images).reshape(-1, GRID * GRID)
    y = np.asarray(outputs, dtype=np.float64).ravel()
    if p.shape[0] < 2:
        raise ValueError("correlation needs at least two images")
    pc = p - p.mean(axis=0)
    yc = y - y.mean()
    denom = np.sqrt(np.sum(pc * pc, axis=0) * np.sum(yc * yc))
    corr = np.divide(pc.T @ yc, denom, out=np.zeros(GRID * GRID), where=denom > 0)
    return np.clip(corr, -1.0, 1.0).reshape(GRID, GRID), int(np.count_nonzero(denom == 0))


def conv_filter_visualization(params, probe) -> tuple[np.ndarray, np.ndarray]:
    """First-layer discriminator filters [N, F, F] and their same-border responses to ``probe`` [N, L, L].

    The probe is scaled exactly as the discriminator scales its input; the
    layer bias is left out so a zero probe gives zero maps.
    """
    w = params["d.conv1.w"].values
    scale = params.config.intensity_scale
    x = np.asarray(probe, dtype=np.float64).reshape(1, *np.shape(probe)[-2:], 1) / scale
    with no_grad():
        maps = ops.conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(w.shape[-1])), border="same").values
    return np.moveaxis(w[:, :, 0, :], -1, 0).copy(), np.moveaxis(maps[0], -1, 0).copy()


# ----------------------------------------------------------------------------
# export


def write_pgm(path, array, vmin: float | None = None, vmax: float | None = None) -> None:
    """Binary greymap (P5, 8 bit) with a linear map of [vmin, vmax] onto [0, 255]."""
    a = np.asarray(array, dtype=np.float64)
    lo = float(a.min()) if vmin is None else vmin
    hi = float(a.max()) if vmax is None else vmax
    scaled = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    data = np.round(np.clip(scaled, 0, 1) * 255).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(header + data.tobytes())
    os.replace(tmp, path)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ----------------------------------------------------------------------------
# training-time scoring


def epoch_scorer(real: ImageSet, per_class: int, seed: int = 0, bins: int = PMF_BINS):
    """Callback for :func:`lagan.train.train` scoring each epoch's generator against ``real``.

    Generates ``per_class`` images of each class from a fixed latent draw and
    bins both samples on the real data's (m, tau21) extent, so scores are
    comparable across epochs (a pooled window would stretch with early
    generator outliers and shrink every distance).  Returns a dict with ``score``
    (sigma) and the per-class EMDs plus the generated signal-mass mode; an
    epoch whose generated class has no defined tau21 scores infinity.
    """
    from lagan.model import generate, sample_latent

    real_table = observable_table(real)
    window = pooled_window(observable_pairs(real_table)[0])
    classes = np.repeat([SIGNAL, BACKGROUND], per_class)

    def callback(epoch: int, params) -> dict:
        z = sample_latent(np.random.default_rng(seed), classes.size, params.config.latent_dim)
        images = generate(params, z, classes)[..., 0]
        gen = ImageSet(images, classes, np.full(classes.size, GENERATED))
        gen_table = observable_table(gen)
        mode = mass_mode(gen_table.mass[classes == SIGNAL])
        try:
            report = minimax_score(real, gen, bins, real_table, gen_table, window)
        except EmptyPmfError:
            # a class with no defined tau21 at all (e.g. blank images) scores worst
            inf = float("inf")
            return {"score": inf, "emd_signal": inf, "emd_background": inf, "signal_mass_mode": mode}
        return {
            "score": report.sigma,
            **{f"emd_{k}": v for k, v in report.per_class_emd.items()},
            "signal_mass_mode": mode,
        }

    return callback


def mass_mode(masses, bin_width: float = 5.0, lo: float = 0.0, hi: float = 300.0) -> float:
    """Centre of the most populated fixed-width mass bin (NaN if no mass lies in [lo, hi])."""
    m = np.asarray(masses, dtype=np.float64)
    m = m[np.isfinite(m)]
    if m.size == 0:
        return float("nan")
    edges = np.arange(lo, hi + bin_width, bin_width)
    counts, _ = np.histogram(m, bins=edges)
    if counts.sum() == 0:
        return float("nan")
    k = int(np.argmax(counts))
    return float(0.5 * (edges[k] + edges[k + 1]))
