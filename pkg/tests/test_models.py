"""Model-layer tests: energy formulas, Lipschitz constants, data plumbing."""
import math

import numpy as np
import pytest

from dpmh import models
from dpmh.errors import ConfigurationError, DataValidationError


BOX = models.BoxDomain([-1.5, -1.5], [2.5, 2.5])


def single_datum_logistic(x, y, temperature=1.0):
    return models.LogisticRegressionModel(
        np.array([x], dtype=float), np.array([y], dtype=float), temperature=temperature
    )


class TestEnergyDiffSum:
    def test_identity_pair_is_zero(self):
        model = models.generate_mixture_data(50, 4, domain=BOX)
        theta = np.array([0.3, -0.2])
        assert models.energy_diff_sum(model, theta, theta) == 0.0

    def test_logistic_single_datum_closed_form(self):
        # U(0,0) = ln 2, U(1,0) = ln(1 + e^-1); frozen high-precision difference
        model = single_datum_logistic([1.0, 0.0], 1.0)
        diff = models.energy_diff_sum(model, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
        assert diff == pytest.approx(0.37988549304172247537, rel=1e-14)

    def test_mixture_single_datum_independent_evaluation(self):
        # x=0: the two modes (0,1) and (1,-1) give identical likelihood, so the
        # difference is exactly zero; an asymmetric pair is pinned from an
        # independently scripted evaluation of the energy formula.
        model = models.GaussianMixtureModel(np.array([0.0]))
        d_sym = models.energy_diff_sum(model, np.array([0.0, 1.0]), np.array([1.0, -1.0]))
        assert d_sym == pytest.approx(0.0, abs=1e-15)
        d_asym = models.energy_diff_sum(model, np.array([0.0, 1.0]), np.array([0.5, 0.3]))
        assert d_asym == pytest.approx(0.0071455715583979486886, rel=1e-13)

    def test_dimension_mismatch_rejected(self):
        model = models.GaussianMixtureModel(np.array([0.0]))
        with pytest.raises(ConfigurationError):
            models.energy_diff_sum(model, np.zeros(3), np.zeros(3))

    def test_temperature_linearity(self):
        x = np.array([-1.0, 0.5, 2.0])
        base = models.GaussianMixtureModel(x, temperature=1.0)
        hot = models.GaussianMixtureModel(x, temperature=500.0)
        a, b = np.array([0.2, 0.7]), np.array([-0.4, 1.3])
        assert models.energy_diff_sum(hot, a, b) == pytest.approx(
            models.energy_diff_sum(base, a, b) / 500.0, rel=1e-12
        )


class TestMixtureModel:
    def test_lipschitz_formula_matches_independent_copy(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-3, 3, size=100)
        s2 = 2.0
        got = models.mixture_lipschitz_constants(x, s2)
        expect = np.sqrt(((2 * np.abs(x) + 9) / s2) ** 2 + ((np.abs(x) + 6) / s2) ** 2)
        assert np.allclose(got, expect, rtol=1e-12)

    def test_tempered_constants(self):
        x = np.array([0.0, 1.0])
        m = models.GaussianMixtureModel(x, temperature=100.0)
        raw = models.mixture_lipschitz_constants(x, 2.0)
        assert np.allclose(m.c, raw / 100.0)
        assert m.C == pytest.approx(raw.sum() / 100.0)

    def test_capacity_consistency(self):
        m = models.generate_mixture_data(5000, 8, domain=BOX)
        assert m.capacity_residual() <= 1e-9 * m.C

    def test_data_outside_truncation_rejected(self):
        with pytest.raises(DataValidationError):
            models.GaussianMixtureModel(np.array([0.0, 3.5]))


class TestGenerateMixtureData:
    def test_zero_count_rejected(self):
        with pytest.raises(ConfigurationError):
            models.generate_mixture_data(0, 1)

    def test_samples_in_bounds_and_mean(self):
        m = models.generate_mixture_data(5000, 7)
        assert m.data.min() >= -3.0 and m.data.max() <= 3.0
        # quadrature oracle: mean of the truncated mixture on [-3, 3]
        truncated_mean = 0.38288944251956682714
        se = m.data.std(ddof=1) / math.sqrt(m.data.size)
        assert abs(m.data.mean() - truncated_mean) <= 3 * se

    def test_deterministic_given_seed(self):
        a = models.generate_mixture_data(2, 123)
        b = models.generate_mixture_data(2, 123)
        assert np.array_equal(a.data, b.data)
        c = models.generate_mixture_data(2, 124)
        assert not np.array_equal(a.data, c.data)


class TestLogisticModel:
    def test_constants_are_row_norms(self):
        X = np.array([[3.0, 4.0], [1.0, 0.0]])
        m = models.LogisticRegressionModel(X, np.array([0.0, 1.0]))
        assert np.allclose(m.c, [5.0, 1.0])
        assert m.C == pytest.approx(6.0)

    def test_energy_closed_form(self):
        m = single_datum_logistic([1.0, 0.0], 1.0)
        assert m.energy_total(np.array([0.0, 0.0])) == pytest.approx(math.log(2.0))
        m0 = single_datum_logistic([1.0, 0.0], 0.0)
        # y=0: U = -log h(-z) = log(1 + e^z)
        assert m0.energy_total(np.array([2.0, 0.0])) == pytest.approx(math.log1p(math.e**2))

    def test_nonbinary_label_rejected(self):
        with pytest.raises(DataValidationError):
            models.LogisticRegressionModel(np.eye(2), np.array([0.0, 0.5]))

    def test_zero_row_rejected(self):
        with pytest.raises(DataValidationError):
            models.LogisticRegressionModel(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([1.0, 0.0]))


class TestLoadFeatureCsv:
    def test_unit_norm_row(self, tmp_path):
        p = tmp_path / "one.csv"
        p.write_text("a,b,label\n1,0,1\n")
        m = models.load_feature_csv(p)
        assert m.c.tolist() == [1.0] and m.C == 1.0

    def test_zero_feature_vector_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,label\n3,4,0\n0,0,1\n")
        with pytest.raises(DataValidationError, match="line 3"):
            models.load_feature_csv(p)

    def test_capacity_matches_independent_norms(self, tmp_path):
        rows = np.array([[1.0, 2.0], [-0.5, 0.25], [3.0, -4.0]])
        p = tmp_path / "three.csv"
        p.write_text(
            "a,b,label\n" + "\n".join(f"{r[0]},{r[1]},{i % 2}" for i, r in enumerate(rows)) + "\n"
        )
        m = models.load_feature_csv(p)
        assert m.C == pytest.approx(sum(math.hypot(*r) for r in rows), rel=1e-12)

    def test_malformed_row_names_line(self, tmp_path):
        p = tmp_path / "mal.csv"
        p.write_text("a,b,label\n1,0,1\nx,0,1\n")
        with pytest.raises(DataValidationError, match="line 3"):
            models.load_feature_csv(p)

    def test_bad_label_names_line(self, tmp_path):
        p = tmp_path / "lbl.csv"
        p.write_text("a,b,label\n1,0,2\n")
        with pytest.raises(DataValidationError, match="line 2"):
            models.load_feature_csv(p)

    def test_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "rag.csv"
        p.write_text("a,b,label\n1,0\n")
        with pytest.raises(DataValidationError, match="line 2"):
            models.load_feature_csv(p)


class TestAssumptionProbes:
    @pytest.mark.parametrize("build", ["mixture", "logistic"])
    def test_energy_difference_bound(self, build):
        if build == "mixture":
            model = models.generate_mixture_data(200, 5, temperature=10.0, domain=BOX)
        else:
            rng = np.random.default_rng(2)
            X = rng.standard_normal((150, 2))
            y = (rng.random(150) < 0.5).astype(float)
            model = models.LogisticRegressionModel(X, y, domain=BOX)
        assert models.probe_energy_bound(model, n_probes=1000, seed=11) <= 1e-9

    def test_distance_bounded_by_diameter(self):
        model = models.generate_mixture_data(50, 5, domain=BOX)
        assert models.probe_distance_bound(model, n_probes=1000, seed=3) <= 1e-12


class TestBoxDomain:
    def test_contains_and_diameter(self):
        assert BOX.contains([0.0, 0.0])
        assert not BOX.contains([2.6, 0.0])
        assert BOX.diameter == pytest.approx(4.0 * math.sqrt(2.0))

    def test_degenerate_rejected(self):
        with pytest.raises(ConfigurationError):
            models.BoxDomain([0.0], [0.0])
