import math

import numpy as np
import pytest

from lagan.evaluate import (
    EmptyPmfError,
    ScoreConfigError,
    Window,
    average_image,
    build_pmf,
    conditional_response_map,
    confusion_matrix,
    conv_filter_visualization,
    epoch_scorer,
    mass_mode,
    minimax_score,
    nearest_generated_neighbor,
    pixel_output_correlation,
    pooled_window,
    read_pgm,
    select,
    top_k_by,
    write_pgm,
)
from lagan.jet import BACKGROUND, GENERATED, REAL, SIGNAL, ImageSet
from lagan.model import init_params


class TestPmf:
    def test_normalised_and_edges(self):
        s = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5], [2.0, 0.5]])
        pmf = build_pmf(s, Window(0.0, 1.0, 0.0, 1.0), bins=4)
        assert pmf.bins.sum() == 1.0
        assert pmf.bins[0, 0] == 0.25 and pmf.bins[3, 3] == 0.25
        # the out-of-window sample lands in the edge bin and is counted
        assert pmf.bins[2, 2] == 0.25 and pmf.bins[3, 2] == 0.25 and pmf.clipped == 1
        assert pmf.n_samples == 4

    def test_empty(self):
        with pytest.raises(EmptyPmfError):
            build_pmf(np.zeros((0, 2)), Window(0, 1, 0, 1))
        with pytest.raises(EmptyPmfError):
            pooled_window(np.zeros((0, 2)))

    def test_pooled_window(self):
        w = pooled_window(np.array([[1.0, 0.2]]), np.array([[3.0, 0.1], [2.0, 0.9]]))
        assert w.as_tuple() == (1.0, 3.0, 0.1, 0.9)

    def test_degenerate_window(self):
        pmf = build_pmf(np.array([[5.0, 0.5], [5.0, 0.5]]), Window(5.0, 5.0, 0.5, 0.5), bins=3)
        assert pmf.bins[0, 0] == 1.0


class TestMinimax:
    def test_self_score_is_zero(self, small_images):
        report = minimax_score(small_images, small_images)
        assert report.sigma == 0.0
        assert set(report.per_class_emd) == {"signal", "background"}
        assert report.bins == 40

    def test_sigma_is_max(self, small_images):
        other = small_images.subset(np.arange(len(small_images)) < 120)
        report = minimax_score(small_images, other)
        assert report.sigma == max(report.per_class_emd.values())
        assert report.sigma > 0
        assert '"sigma"' in report.to_json()

    def test_missing_class(self, small_images):
        only_signal = small_images.of_class(SIGNAL)
        with pytest.raises(ScoreConfigError):
            minimax_score(small_images, only_signal)


class TestDiagnostics:
    def test_select_and_average(self):
        p = np.arange(4 * 625, dtype=float).reshape(4, 25, 25)
        s = ImageSet(p, [SIGNAL, BACKGROUND, SIGNAL, SIGNAL], [REAL, REAL, GENERATED, REAL])
        sub = select(s, label=SIGNAL, origin=REAL)
        assert len(sub) == 2
        np.testing.assert_array_equal(average_image(sub), (p[0] + p[3]) / 2)
        top = select(s, label=SIGNAL, scores=[0.1, 0.9, 0.5, 0.7], quantile=0.5)
        assert len(top) == 2
        with pytest.raises(ValueError):
            average_image(np.zeros((0, 25, 25)))

    def test_top_k_stable(self):
        np.testing.assert_array_equal(top_k_by([1.0, 3.0, 3.0, 2.0], 3), [1, 2, 3])
        with pytest.raises(ValueError):
            top_k_by([1.0], 2)

    def test_nearest_neighbor(self, rng):
        g = rng.random((5, 25, 25))
        k, img, d = nearest_generated_neighbor(g[3] + 1e-3, g)
        assert k == 3 and d == pytest.approx(25e-3)
        np.testing.assert_array_equal(img, g[3])

    def test_confusion_matrix(self):
        m = confusion_matrix([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
        np.testing.assert_array_equal(m, [[0.5, 0.5], [0.5, 0.5]])
        m = confusion_matrix([0.9], [1])
        np.testing.assert_array_equal(m, [[0.0, 0.0], [0.0, 1.0]])

    def test_response_map_columns(self, rng):
        v = rng.uniform(0, 10, 500)
        r = rng.random(500)
        h, empty = conditional_response_map(v, r, np.linspace(0, 20, 11), np.linspace(0, 1, 6))
        sums = h.sum(axis=0)
        np.testing.assert_allclose(sums[:5], 1.0)
        assert list(empty) == [5, 6, 7, 8, 9]

    def test_pixel_correlation(self, rng):
        p = rng.random((50, 25, 25))
        y = p[:, 3, 4] * 2 + 1
        corr, degenerate = pixel_output_correlation(p, y)
        assert corr[3, 4] == pytest.approx(1.0)
        assert degenerate == 0 and np.all(np.abs(corr) <= 1)
        p[:, 0, 0] = 1.0
        _, degenerate = pixel_output_correlation(p, y)
        assert degenerate == 1

    def test_filter_visualization(self, small_model_config):
        params = init_params(small_model_config, np.random.default_rng(0))
        filters, maps = conv_filter_visualization(params, np.zeros((25, 25)))
        assert filters.shape == (4, 5, 5) and maps.shape == (4, 25, 25)
        assert np.all(maps == 0)

    def test_mass_mode(self):
        assert mass_mode([81.0, 82.0, 79.0, 40.0]) == 82.5
        assert math.isnan(mass_mode([]))


class TestPgm:
    def test_roundtrip(self, tmp_path):
        a = np.array([[0.0, 1.0], [0.5, 2.0]])
        write_pgm(tmp_path / "a.pgm", a)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), [[0, 128], [64, 255]])
        write_pgm(tmp_path / "c.pgm", np.ones((2, 3)))
        assert read_pgm(tmp_path / "c.pgm").shape == (2, 3)


class TestEpochScorer:
    def test_reports_keys_and_is_repeatable(self, small_images, small_model_config):
        params = init_params(small_model_config, np.random.default_rng(1))
        scorer = epoch_scorer(small_images, 20, seed=3)
        a = scorer(1, params)
        b = scorer(1, params)
        assert set(a) == {"score", "emd_signal", "emd_background", "signal_mass_mode"}
        assert a == b
