"""
Unit tests for services/kernels.py
"""

import numpy as np
import pytest

from models.embedding import Embedding
from models.kernel import KERNEL_FAMILIES, KernelSpec
from models.measure import DiscreteMeasure
from services.kernels import (
    check_psd,
    consistency_curve,
    cross_gram,
    gram,
    kernel_derivatives,
    kernel_value,
    mmd_gram,
    mmd_gram_shared,
    mmd_kernel,
    mmd_sq,
    write_gram,
)
from utils import formats
from utils.errors import ValidationError


def random_embeddings(rng, n, q, version='v'):
    return [Embedding(rng.standard_normal(q), version, True) for _ in range(n)]


def random_reference(rng, q):
    return DiscreteMeasure(rng.random((q, 2)), rng.random(q) + 0.1)


class TestKernelValue:
    """Test kernel families as functions of the distance."""

    @pytest.mark.parametrize('family', KERNEL_FAMILIES)
    def test_zero_distance(self, family):
        """Test that every family equals the variance at distance zero."""
        assert kernel_value(KernelSpec(family, 2.5, 0.7), 0.0) == pytest.approx(2.5)

    def test_sqexp(self):
        """Test exp(-d^2 / 2) at d = sqrt(2)."""
        assert kernel_value(KernelSpec('sqexp'), np.sqrt(2.0)) == pytest.approx(np.exp(-1.0))

    def test_exp_norm(self):
        """Test exp(-d / (2 sigma^2)) at d = 1, sigma = 1."""
        assert kernel_value(KernelSpec('exp_norm'), 1.0) == pytest.approx(np.exp(-0.5))

    def test_matern_decay(self):
        """Test that the Matern kernel vanishes far away."""
        assert kernel_value(KernelSpec('matern32'), 1e3) < 1e-12

    def test_negative_distance(self):
        """Test that negative distances are rejected."""
        with pytest.raises(ValidationError):
            kernel_value(KernelSpec(), -0.1)

    @pytest.mark.parametrize('family', KERNEL_FAMILIES)
    def test_non_increasing(self, family):
        """Test monotone decay on a grid of distances."""
        spec = KernelSpec(family, 1.3, 0.6)
        values = [kernel_value(spec, d) for d in np.linspace(0.0, 5.0, 200)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_unknown_family(self):
        """Test that kernel specs only accept known families."""
        with pytest.raises(ValidationError):
            KernelSpec('laplace')


class TestKernelDerivatives:
    """Test derivatives in squared distance and log-parameters."""

    @pytest.mark.parametrize('family', KERNEL_FAMILIES)
    def test_against_finite_differences(self, family):
        """Test analytic derivatives against central differences."""
        h = 1e-6
        s = np.array([0.3, 1.2, 2.5])
        spec = KernelSpec(family, 1.3, 0.7)
        dk_ds, k, dk_dlogsigma = kernel_derivatives(spec, s)

        def value(spec_, s_):
            return kernel_value(spec_, float(np.sqrt(s_)))

        for i, si in enumerate(s):
            numeric_ds = (value(spec, si + h) - value(spec, si - h)) / (2 * h)
            up = KernelSpec(family, spec.variance, spec.lengthscale * np.exp(h))
            down = KernelSpec(family, spec.variance, spec.lengthscale * np.exp(-h))
            numeric_sigma = (value(up, si) - value(down, si)) / (2 * h)
            assert dk_ds[i] == pytest.approx(numeric_ds, rel=1e-6, abs=1e-9)
            assert dk_dlogsigma[i] == pytest.approx(numeric_sigma, rel=1e-6, abs=1e-9)
            assert k[i] == pytest.approx(value(spec, si))

    def test_exp_norm_at_zero(self):
        """Test that the singular derivative is zeroed on the diagonal."""
        dk_ds, _, _ = kernel_derivatives(KernelSpec('exp_norm'), np.array([0.0]))
        assert dk_ds[0] == 0.0


class TestGram:
    """Test Gram matrix assembly."""

    def test_identical_embeddings(self):
        """Test that equal embeddings give a constant matrix."""
        emb = Embedding(np.array([0.1, -0.1]), 'v', True)
        ref = DiscreteMeasure.uniform(np.array([[0.0], [1.0]]))
        G = gram([emb] * 3, ref, KernelSpec('sqexp', 2.0, 1.0))
        np.testing.assert_allclose(G.values, np.full((3, 3), 2.0))
        assert G.ref_version == 'v'

    def test_single_embedding(self, rng):
        """Test that one embedding gives [[l]]."""
        G = gram(random_embeddings(rng, 1, 3), random_reference(rng, 3), KernelSpec('matern52', 0.4, 1.0))
        np.testing.assert_array_equal(G.values, [[0.4]])

    def test_empty(self, rng):
        """Test that no embeddings give an empty matrix."""
        assert gram([], random_reference(rng, 3), KernelSpec()).size == 0

    def test_mixed_versions(self, rng):
        """Test that embeddings from different references are rejected."""
        embeddings = random_embeddings(rng, 2, 3, 'a') + random_embeddings(rng, 1, 3, 'b')
        with pytest.raises(ValidationError):
            gram(embeddings, random_reference(rng, 3), KernelSpec())

    @pytest.mark.parametrize('family', KERNEL_FAMILIES)
    def test_symmetric_with_variance_diagonal(self, rng, family):
        """Test exact symmetry and the diagonal."""
        G = gram(random_embeddings(rng, 12, 4), random_reference(rng, 4), KernelSpec(family, 1.7, 0.9)).values
        np.testing.assert_array_equal(G, G.T)
        np.testing.assert_allclose(np.diag(G), 1.7)

    @pytest.mark.parametrize('family', ('sqexp', 'matern32', 'matern52'))
    def test_positive_semidefinite(self, rng, family):
        """Test PSD over random embedding sets."""
        for _ in range(100):
            n = int(rng.integers(2, 51))
            q = int(rng.integers(2, 6))
            G = gram(random_embeddings(rng, n, q), random_reference(rng, q),
                     KernelSpec(family, 1.0, float(rng.uniform(0.3, 3.0))))
            assert check_psd(G).ok

    def test_distinct_embeddings_positive_definite(self, rng):
        """Test that pairwise distinct embeddings give a strictly positive spectrum."""
        G = gram(random_embeddings(rng, 8, 3), random_reference(rng, 3), KernelSpec('sqexp', 1.0, 1.0))
        assert check_psd(G).min_eig > 1e-10 * np.trace(G.values)

    def test_cross_gram_matches_gram(self, rng):
        """Test that the rectangular kernel agrees with the square one."""
        embeddings = random_embeddings(rng, 5, 3)
        ref = random_reference(rng, 3)
        spec = KernelSpec('matern32', 1.1, 0.8)
        np.testing.assert_allclose(cross_gram(embeddings, embeddings[:2], ref, spec),
                                   gram(embeddings, ref, spec).values[:, :2], atol=1e-12)

    def test_write_gram(self, tmp_path, rng):
        """Test the headerless CSV and its tagged sidecar."""
        G = gram(random_embeddings(rng, 3, 2), random_reference(rng, 2), KernelSpec())
        csv_path, sidecar_path = write_gram(G, tmp_path / 'gram.csv', {'kernel': 'sinkhorn'})
        np.testing.assert_array_equal(np.loadtxt(csv_path, delimiter=','), G.values)
        sidecar = formats.read_json(sidecar_path, formats.GRAM_FORMAT)
        assert sidecar['n'] == 3
        assert sidecar['kernel'] == 'sinkhorn'
        assert sidecar['spec']['family'] == 'sqexp'


class TestCheckPsd:
    """Test the eigenvalue check."""

    def test_identity(self):
        """Test the identity matrix."""
        report = check_psd(np.eye(3))
        assert report.min_eig == pytest.approx(1.0)
        assert report.ok

    def test_rank_one(self):
        """Test a singular PSD matrix."""
        report = check_psd(np.ones((2, 2)))
        assert report.min_eig == pytest.approx(0.0, abs=1e-12)
        assert report.ok

    def test_indefinite(self):
        """Test an indefinite matrix."""
        report = check_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert report.min_eig == pytest.approx(-1.0)
        assert not report.ok

    def test_asymmetric(self):
        """Test that asymmetric input is rejected."""
        with pytest.raises(ValidationError):
            check_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestMmd:
    """Test the MMD baseline."""

    def test_same_measure(self, two_measures):
        """Test that a measure is at MMD zero from itself."""
        P, _ = two_measures
        assert mmd_sq(P, P, 0.3) == pytest.approx(0.0, abs=1e-15)
        assert mmd_kernel(P, P, 0.3, 1.5) == pytest.approx(1.5)

    def test_two_atoms(self):
        """Test 2 (1 - k(x, y)) for two Diracs."""
        P, Q = DiscreteMeasure.dirac([0.0, 0.0]), DiscreteMeasure.dirac([0.3, 0.4])
        expected = 2 * (1 - np.exp(-0.25 / (2 * 0.5 ** 2)))
        assert mmd_sq(P, Q, 0.5) == pytest.approx(expected)

    def test_naive_summation(self, rng):
        """Test the vectorized V-statistic against a double loop."""
        P = DiscreteMeasure(rng.random((7, 2)), rng.random(7) + 0.1)
        Q = DiscreteMeasure(rng.random((5, 2)), rng.random(5) + 0.1)
        sigma = 0.4

        def k(x, y):
            return np.exp(-np.sum((x - y) ** 2) / (2 * sigma ** 2))

        def cross(A, B):
            return sum(a_w * b_w * k(a, b) for a, a_w in zip(A.points, A.weights)
                       for b, b_w in zip(B.points, B.weights))

        naive = cross(P, P) + cross(Q, Q) - 2 * cross(P, Q)
        assert mmd_sq(P, Q, sigma) == pytest.approx(naive, abs=1e-12)

    def test_kernel_of_unit_mmd(self, monkeypatch):
        """Test exp(-1) when the squared MMD is one."""
        monkeypatch.setattr('services.kernels.mmd_sq', lambda P, Q, s: 1.0)
        P = DiscreteMeasure.dirac([0.0])
        assert mmd_kernel(P, P, 1.0, 1.0) == pytest.approx(np.exp(-1.0))

    def test_symmetric(self, two_measures):
        """Test mmd_kernel(P, Q) = mmd_kernel(Q, P)."""
        P, Q = two_measures
        assert mmd_kernel(P, Q, 0.2, 1.0) == pytest.approx(mmd_kernel(Q, P, 0.2, 1.0), abs=1e-15)

    def test_shared_support_path(self, rng):
        """Test that the shared-support Gram matches pairwise evaluation."""
        points = rng.random((6, 2))
        weights = rng.random((4, 6)) + 0.05
        measures = [DiscreteMeasure(points, row) for row in weights]
        shared = mmd_gram_shared(points, weights, 0.3, 1.0).values
        pairwise = np.array([[mmd_kernel(a, b, 0.3, 1.0) for b in measures] for a in measures])
        np.testing.assert_allclose(shared, pairwise, atol=1e-12)
        np.testing.assert_allclose(mmd_gram(measures, 0.3, 1.0).values, shared, atol=1e-15)

    def test_general_path(self, two_measures):
        """Test the Gram of measures on different supports."""
        P, Q = two_measures
        G = mmd_gram([P, Q], 0.2, 2.0)
        np.testing.assert_allclose(np.diag(G.values), 2.0)
        assert G.values[0, 1] == pytest.approx(mmd_kernel(P, Q, 0.2, 2.0))
        assert G.spec is None


class TestConsistencyCurve:
    """Test the subsampling error curve."""

    def test_single_atom_is_exact(self, small_reference, sink_cfg):
        """Test that subsamples of Diracs reproduce them exactly."""
        P, Q = DiscreteMeasure.dirac([0.1, 0.2]), DiscreteMeasure.dirac([-0.2, 0.0])
        rows = consistency_curve(P, Q, small_reference, sink_cfg, KernelSpec(), [1, 4], [0, 1, 2])
        assert [row['k'] for row in rows] == [1, 4]
        assert all(row['mean_abs_error'] == 0.0 for row in rows)
        assert rows[0]['seeds'] == 3

    def test_sizes_must_increase(self, two_measures, small_reference, sink_cfg):
        """Test that subsample sizes are strictly increasing."""
        P, Q = two_measures
        with pytest.raises(ValidationError):
            consistency_curve(P, Q, small_reference, sink_cfg, KernelSpec(), [8, 4], [0])
