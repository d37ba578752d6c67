import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmagp.gp_layer import (
    MIN_VARIANCE,
    ConstantMean,
    GPUnit,
    LinearMean,
    kl_to_prior,
    predict_marginal,
    trace_penalty,
)
from sigmagp.kernels import DTYPE

from util import random_unit


def _dense_marginal_oracle(unit: GPUnit, x: torch.Tensor):
    """Textbook formulas via explicit numpy inverses; shares no code with
    predict_marginal beyond the kernel itself."""
    z = unit.kernel_view(unit.inducing)
    kmm = unit.kernel(z, z).detach().numpy()
    kmm = 0.5 * (kmm + kmm.T)
    knm = unit.kernel(unit.kernel_view(x), z).detach().numpy()
    kdiag = unit.kernel.diagonal(x).detach().numpy()
    m = unit.var_mean.detach().numpy()
    s = unit.s_matrix().detach().numpy()
    kmm_inv = np.linalg.inv(kmm)
    prior_mean = unit.mean_fn(unit.mean_view(x)).detach().numpy()
    mean = prior_mean + knm @ kmm_inv @ m
    middle = kmm_inv @ s @ kmm_inv
    var = (
        kdiag
        - np.einsum("im,mn,in->i", knm, kmm_inv, knm)
        + np.einsum("im,mn,in->i", knm, middle, knm)
    )
    return mean, np.maximum(var, MIN_VARIANCE)


class TestMeans:
    def test_constant_mean(self):
        mean = ConstantMean(1.5)
        out = mean(torch.zeros(4, 3, dtype=DTYPE))
        np.testing.assert_allclose(out.detach().numpy(), 1.5)

    def test_linear_mean(self):
        mean = LinearMean(2)
        with torch.no_grad():
            mean.weight.copy_(torch.tensor([2.0, -1.0], dtype=DTYPE))
            mean.bias.copy_(torch.tensor(0.5, dtype=DTYPE))
        x = torch.tensor([[1.0, 1.0], [0.0, 3.0]], dtype=DTYPE)
        np.testing.assert_allclose(
            mean(x).detach().numpy(), [2.0 - 1.0 + 0.5, -3.0 + 0.5]
        )


class TestPredictMarginal:
    @pytest.mark.parametrize("s_repr", ["diag", "chol"])
    def test_matches_dense_oracle(self, s_repr):
        unit = random_unit(3, location_dim=2, num_inducing=5, s_repr=s_repr)
        g = torch.Generator().manual_seed(12)
        x = torch.randn(7, 2, dtype=DTYPE, generator=g)
        marg = predict_marginal(unit, x)
        mean_ref, var_ref = _dense_marginal_oracle(unit, x)
        np.testing.assert_allclose(marg.mean.detach().numpy(), mean_ref, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(marg.var.detach().numpy(), var_ref, rtol=1e-9, atol=1e-9)

    def test_interpolates_inducing_values_when_s_vanishes(self):
        # at x = z_j with S ~ 0: mean = prior_mean + m_j, var ~ 0 (clamped)
        unit = random_unit(4, location_dim=2, num_inducing=4, s_repr="diag")
        with torch.no_grad():
            unit.raw_s_diag.fill_(math.log(1e-14))
        x = unit.inducing.detach().clone()
        marg = predict_marginal(unit, x)
        expected = (
            unit.mean_fn(unit.mean_view(x)) + unit.var_mean
        ).detach().numpy()
        np.testing.assert_allclose(marg.mean.detach().numpy(), expected, atol=1e-5)
        assert (marg.var.detach().numpy() <= 1e-5).all()

    def test_variance_clamped_at_floor(self):
        unit = random_unit(5, location_dim=1, num_inducing=3, s_repr="diag")
        with torch.no_grad():
            unit.raw_s_diag.fill_(math.log(1e-30))
        x = unit.inducing.detach().clone()
        var = predict_marginal(unit, x).var
        assert (var.detach().numpy() >= MIN_VARIANCE).all()

    def test_mean_override_replaces_mean_inputs(self):
        unit = random_unit(6, location_dim=2, num_inducing=4,
                           mean_fn=LinearMean(2))
        with torch.no_grad():
            unit.mean_fn.weight.copy_(torch.tensor([1.0, 2.0], dtype=DTYPE))
        g = torch.Generator().manual_seed(3)
        x = torch.randn(5, 2, dtype=DTYPE, generator=g)
        other = torch.randn(5, 2, dtype=DTYPE, generator=g)
        base = predict_marginal(unit, x)
        swapped = predict_marginal(unit, x, mean_x=other)
        delta = (swapped.mean - base.mean).detach().numpy()
        expected = (unit.mean_fn(other) - unit.mean_fn(x)).detach().numpy()
        np.testing.assert_allclose(delta, expected, atol=1e-12)
        np.testing.assert_allclose(
            swapped.var.detach().numpy(), base.var.detach().numpy(), atol=1e-13
        )

    def test_kernel_and_mean_views_select_coordinates(self):
        # a unit over 3-dim locations: kernel sees dims (0, 1), mean dim (2)
        unit = random_unit(
            7,
            location_dim=3,
            num_inducing=4,
            mean_fn=LinearMean(1),
            kernel_idx=(0, 1),
            mean_idx=(2,),
        )
        g = torch.Generator().manual_seed(4)
        x = torch.randn(6, 3, dtype=DTYPE, generator=g)
        marg = predict_marginal(unit, x)
        # changing the mean coordinate moves only the mean
        x2 = x.clone()
        x2[:, 2] += 1.0
        marg2 = predict_marginal(unit, x2)
        np.testing.assert_allclose(
            marg2.var.detach().numpy(), marg.var.detach().numpy(), atol=1e-13
        )
        shift = (marg2.mean - marg.mean).detach().numpy()
        np.testing.assert_allclose(
            shift, float(unit.mean_fn.weight.detach()[0]), atol=1e-12
        )
        # changing a kernel coordinate leaves the prior mean term alone
        x3 = x.clone()
        x3[:, 0] += 1.0
        marg3 = predict_marginal(unit, x3)
        assert not np.allclose(
            marg3.var.detach().numpy(), marg.var.detach().numpy(), atol=1e-6
        )

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_variance_positive_everywhere(self, seed):
        unit = random_unit(seed, location_dim=2, num_inducing=4, s_repr="diag")
        g = torch.Generator().manual_seed(seed + 1)
        x = torch.randn(8, 2, dtype=DTYPE, generator=g) * 3
        var = predict_marginal(unit, x).var.detach().numpy()
        assert (var >= MIN_VARIANCE).all()

    def test_growing_s_grows_variance(self):
        unit = random_unit(9, location_dim=2, num_inducing=4, s_repr="diag")
        g = torch.Generator().manual_seed(5)
        x = torch.randn(6, 2, dtype=DTYPE, generator=g)
        small = predict_marginal(unit, x).var.detach().numpy()
        with torch.no_grad():
            unit.raw_s_diag.add_(2.0)
        large = predict_marginal(unit, x).var.detach().numpy()
        assert (large >= small - 1e-12).all()


class TestKL:
    def test_zero_when_posterior_equals_prior(self):
        unit = random_unit(11, location_dim=2, num_inducing=5, s_repr="chol")
        z = unit.kernel_view(unit.inducing)
        kmm = unit.kernel(z, z)
        kmm = 0.5 * (kmm + kmm.T)
        chol = torch.linalg.cholesky(kmm + 1e-12 * torch.eye(5, dtype=DTYPE))
        with torch.no_grad():
            unit.var_mean.copy_(unit.mean_fn(unit.mean_view(unit.inducing)))
            # pack chol into raw_s_tril with log diagonal
            rows, cols = torch.tril_indices(5, 5)
            packed = chol[rows, cols].clone()
            diag_positions = rows == cols
            packed[diag_positions] = packed[diag_positions].log()
            unit.raw_s_tril.copy_(packed)
        kl = float(kl_to_prior(unit).detach())
        assert 0.0 <= kl < 1e-8

    def test_scalar_example(self):
        # M=1, k(z,z)=1, m=2, S=1: KL = 0.5 (1 + 4 - 1 + 0 - 0) = 2
        unit = GPUnit(1, 1, ConstantMean(0.0), s_repr="diag")
        with torch.no_grad():
            unit.inducing.zero_()
            unit.var_mean.fill_(2.0)
            unit.raw_s_diag.fill_(0.0)
        assert abs(float(kl_to_prior(unit).detach()) - 2.0) < 1e-12

    def test_matches_dense_oracle(self):
        unit = random_unit(13, location_dim=2, num_inducing=4, s_repr="chol")
        z = unit.kernel_view(unit.inducing)
        kmm = unit.kernel(z, z).detach().numpy()
        kmm = 0.5 * (kmm + kmm.T)
        s = unit.s_matrix().detach().numpy()
        d = (
            unit.var_mean - unit.mean_fn(unit.mean_view(unit.inducing))
        ).detach().numpy()
        kmm_inv = np.linalg.inv(kmm)
        ref = 0.5 * (
            np.trace(kmm_inv @ s)
            + d @ kmm_inv @ d
            - 4
            + np.linalg.slogdet(kmm)[1]
            - np.linalg.slogdet(s)[1]
        )
        assert abs(float(kl_to_prior(unit).detach()) - ref) < 1e-9

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative(self, seed):
        unit = random_unit(seed, location_dim=1, num_inducing=3, s_repr="diag")
        assert float(kl_to_prior(unit).detach()) >= 0.0


class TestTracePenalty:
    def test_near_zero_at_inducing_points(self):
        unit = random_unit(15, location_dim=2, num_inducing=4)
        penalty = float(trace_penalty(unit, unit.inducing.detach().clone()).detach())
        assert 0.0 <= penalty < 1e-6

    def test_positive_away_from_inducing_points(self):
        unit = random_unit(16, location_dim=2, num_inducing=4)
        g = torch.Generator().manual_seed(8)
        x = torch.randn(10, 2, dtype=DTYPE, generator=g) * 5
        assert float(trace_penalty(unit, x).detach()) > 0.0


class TestValidation:
    def test_bad_s_repr(self):
        with pytest.raises(ValueError):
            GPUnit(2, 3, ConstantMean(), s_repr="full")

    def test_bad_index(self):
        with pytest.raises(ValueError):
            GPUnit(2, 3, ConstantMean(), kernel_idx=(0, 5))

    def test_s_chol_initializations(self):
        diag_unit = GPUnit(2, 3, ConstantMean(), s_repr="diag")
        chol_unit = GPUnit(2, 3, ConstantMean(), s_repr="chol")
        np.testing.assert_allclose(
            diag_unit.s_matrix().detach().numpy(), 1e-2 * np.eye(3), atol=1e-15
        )
        np.testing.assert_allclose(
            chol_unit.s_matrix().detach().numpy(), 1e-2 * np.eye(3), atol=1e-15
        )
