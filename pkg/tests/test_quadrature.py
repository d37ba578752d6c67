import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sigmagp.kernels import DTYPE
from sigmagp.quadrature import (
    MAX_SITES,
    QuadratureRule,
    gauss_hermite_nodes,
    make_rule,
    reflect_half_nodes,
    sigma_points,
)


def standard_normal_moment(k: int) -> float:
    """E[X^k] for X ~ N(0,1): (k-1)!! for even k, 0 for odd k."""
    if k % 2 == 1:
        return 0.0
    result = 1.0
    for factor in range(k - 1, 0, -2):
        result *= factor
    return result


class TestGaussHermite:
    def test_three_site_rule_is_closed_form(self):
        nodes, weights = gauss_hermite_nodes(3)
        root3 = math.sqrt(3.0)
        np.testing.assert_allclose(
            nodes.numpy(), [-root3, 0.0, root3], rtol=0, atol=1e-15
        )
        np.testing.assert_allclose(
            weights.numpy(), [1 / 6, 2 / 3, 1 / 6], rtol=0, atol=1e-15
        )

    def test_single_site_rule(self):
        nodes, weights = gauss_hermite_nodes(1)
        assert float(nodes[0]) == 0.0
        assert float(weights[0]) == 1.0

    @pytest.mark.parametrize("num_sites", range(1, 11))
    def test_moments_exact_up_to_degree(self, num_sites):
        nodes, weights = gauss_hermite_nodes(num_sites)
        x = nodes.numpy()
        w = weights.numpy()
        for degree in range(2 * num_sites):
            value = float(w @ x**degree)
            exact = standard_normal_moment(degree)
            scale = max(1.0, float(w @ np.abs(x) ** degree))
            assert abs(value - exact) <= 1e-10 * scale, (num_sites, degree)

    def test_higher_moment_not_matched(self):
        # degree 2S is the first the rule cannot integrate
        nodes, weights = gauss_hermite_nodes(2)
        value = float(weights.numpy() @ nodes.numpy() ** 4)
        assert abs(value - standard_normal_moment(4)) > 0.1

    @pytest.mark.parametrize("num_sites", range(1, 16))
    def test_structure(self, num_sites):
        nodes, weights = gauss_hermite_nodes(num_sites)
        x = nodes.numpy()
        w = weights.numpy()
        assert (np.diff(x) > 0).all()
        assert (w > 0).all()
        assert abs(w.sum() - 1.0) < 1e-14
        np.testing.assert_allclose(x, -x[::-1], atol=1e-14)
        np.testing.assert_allclose(w, w[::-1], rtol=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            gauss_hermite_nodes(0)
        with pytest.raises(ValueError):
            gauss_hermite_nodes(MAX_SITES + 1)


class TestReflectHalfNodes:
    @pytest.mark.parametrize("num_sites", [2, 3, 4, 5, 7])
    def test_antisymmetric_pairing(self, num_sites):
        free = torch.randn(
            (num_sites + 1) // 2, 3, dtype=DTYPE,
            generator=torch.Generator().manual_seed(num_sites),
        )
        table = reflect_half_nodes(free, num_sites)
        assert table.shape == (num_sites, 3)
        for s in range(num_sites):
            np.testing.assert_array_equal(
                table[s].numpy(), -table[num_sites - 1 - s].numpy()
            )

    def test_odd_middle_row_is_exact_zero(self):
        free = torch.randn(3, 2, dtype=DTYPE, generator=torch.Generator().manual_seed(0))
        table = reflect_half_nodes(free, 5)
        assert (table[2] == 0.0).all()

    def test_unused_free_row_for_odd_sites(self):
        # ceil(5/2) = 3 free rows, but the table's middle row is pinned at
        # zero regardless of the third free row
        g = torch.Generator().manual_seed(1)
        free = torch.randn(3, 2, dtype=DTYPE, generator=g)
        other = free.clone()
        other[2] += 100.0
        np.testing.assert_array_equal(
            reflect_half_nodes(free, 5).numpy(),
            reflect_half_nodes(other, 5).numpy(),
        )


class TestRuleInitialization:
    @pytest.mark.parametrize("kind", ["gh", "qr1", "qr2"])
    def test_starts_at_gauss_hermite(self, kind):
        rule = make_rule(kind, 4, 2, seed=0)
        nodes, weights = gauss_hermite_nodes(4)
        table = rule.node_table().detach().numpy()
        np.testing.assert_allclose(
            table, nodes.numpy()[:, None].repeat(2, axis=1), atol=1e-15
        )
        logw, offsets = rule.components()
        grid_weights = np.array(
            [
                float(weights[i] * weights[j])
                for i, j in itertools.product(range(4), repeat=2)
            ]
        )
        np.testing.assert_allclose(logw.exp().detach().numpy(), grid_weights, rtol=1e-12)

    def test_qr3_starts_near_gauss_hermite(self):
        rule = make_rule("qr3", 8, 3, seed=5)
        nodes, weights = gauss_hermite_nodes(8)
        np.testing.assert_allclose(
            rule.component_log_weights().exp().detach().numpy(),
            weights.numpy(),
            rtol=1e-12,
        )
        jitter = rule.nodes.detach().numpy() - nodes.numpy()[:, None]
        assert np.abs(jitter).max() < 0.6  # 0.1-scale noise
        assert np.abs(jitter).max() > 0.0

    def test_qr3_seed_determinism(self):
        a = make_rule("qr3", 5, 2, seed=7).nodes.detach().numpy()
        b = make_rule("qr3", 5, 2, seed=7).nodes.detach().numpy()
        c = make_rule("qr3", 5, 2, seed=8).nodes.detach().numpy()
        np.testing.assert_array_equal(a, b)
        assert (a != c).any()

    def test_component_counts(self):
        assert make_rule("gh", 3, 2).num_components == 9
        assert make_rule("qr1", 3, 3).num_components == 27
        assert make_rule("qr2", 4, 2).num_components == 16
        assert make_rule("qr3", 10, 3).num_components == 10

    def test_free_parameter_shapes(self):
        assert make_rule("qr1", 3, 2).nodes.shape == (3, 2)
        assert make_rule("qr1", 3, 2).weight_logits.shape == (9,)
        assert make_rule("qr2", 5, 2).free_nodes.shape == (3, 2)
        assert make_rule("qr3", 6, 2, seed=0).weight_logits.shape == (6,)
        assert len(list(make_rule("gh", 3, 2).parameters())) == 0

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            make_rule("qr4", 3, 2)
        with pytest.raises(ValueError):
            make_rule("gh", 0, 2)
        with pytest.raises(ValueError):
            make_rule("gh", 3, 0)


class TestComponents:
    def test_grid_offsets_transcribe_product_rule(self):
        # independent nested-loop construction of the 3^2 grid
        rule = make_rule("qr1", 3, 2)
        with torch.no_grad():
            rule.nodes.copy_(torch.tensor(
                [[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]], dtype=DTYPE
            ))
        _, offsets = rule.components()
        expected = []
        for i in range(3):
            for j in range(3):
                expected.append([float(rule.nodes[i, 0].detach()), float(rule.nodes[j, 1].detach())])
        np.testing.assert_array_equal(offsets.detach().numpy(), np.array(expected))

    def test_qr3_offsets_are_table_rows(self):
        rule = make_rule("qr3", 4, 3, seed=2)
        _, offsets = rule.components()
        np.testing.assert_array_equal(
            offsets.detach().numpy(), rule.nodes.detach().numpy()
        )

    @settings(max_examples=30, deadline=None)
    @given(
        kind=st.sampled_from(["qr1", "qr2", "qr3"]),
        num_sites=st.integers(1, 5),
        width=st.integers(1, 3),
        seed=st.integers(0, 1000),
    )
    def test_weights_normalized_for_any_logits(self, kind, num_sites, width, seed):
        rule = make_rule(kind, num_sites, width, seed=seed)
        with torch.no_grad():
            rule.weight_logits.copy_(
                torch.randn(
                    rule.weight_logits.shape,
                    dtype=DTYPE,
                    generator=torch.Generator().manual_seed(seed),
                )
                * 3
            )
        logw = rule.component_log_weights()
        total = float(logw.exp().sum().detach())
        assert abs(total - 1.0) < 1e-12
        assert logw.shape == (rule.num_components,)

    def test_qr2_table_stays_antisymmetric_after_update(self):
        rule = make_rule("qr2", 5, 2)
        with torch.no_grad():
            rule.free_nodes.add_(
                torch.randn(rule.free_nodes.shape, dtype=DTYPE,
                            generator=torch.Generator().manual_seed(3))
            )
        table = rule.node_table().detach().numpy()
        np.testing.assert_array_equal(table, -table[::-1])
        assert (table[2] == 0.0).all()

    def test_gradients_flow_to_nodes_and_logits(self):
        for kind in ("qr1", "qr2", "qr3"):
            rule = make_rule(kind, 3, 2, seed=1)
            logw, offsets = rule.components()
            value = (logw.exp() * offsets.square().sum(-1)).sum()
            value.backward()
            node_param = rule.free_nodes if kind == "qr2" else rule.nodes
            assert node_param.grad is not None
            assert torch.isfinite(node_param.grad).all()
            assert rule.weight_logits.grad is not None


class TestSigmaPoints:
    def test_single_state_affine(self):
        rule = make_rule("gh", 3, 2)
        mean = torch.tensor([1.0, -2.0], dtype=DTYPE)
        std = torch.tensor([0.5, 2.0], dtype=DTYPE)
        weights, points = sigma_points(rule, mean, std)
        assert points.shape == (9, 2)
        _, offsets = rule.components()
        np.testing.assert_allclose(
            points.numpy(), (mean + offsets * std).numpy(), atol=1e-15
        )
        assert abs(float(weights.sum().detach()) - 1.0) < 1e-12

    def test_batched_state_shape_and_values(self):
        rule = make_rule("qr3", 4, 2, seed=9)
        g = torch.Generator().manual_seed(10)
        mean = torch.randn(5, 2, dtype=DTYPE, generator=g)
        std = torch.rand(5, 2, dtype=DTYPE, generator=g) + 0.1
        weights, points = sigma_points(rule, mean, std)
        assert points.shape == (4, 5, 2)
        _, offsets = rule.components()
        for c in range(4):
            for b in range(5):
                np.testing.assert_allclose(
                    points[c, b].detach().numpy(),
                    (mean[b] + offsets[c] * std[b]).detach().numpy(),
                    atol=1e-15,
                )

    def test_zero_std_collapses_to_mean(self):
        rule = make_rule("gh", 5, 1)
        mean = torch.tensor([3.0], dtype=DTYPE)
        _, points = sigma_points(rule, mean, torch.zeros(1, dtype=DTYPE))
        np.testing.assert_array_equal(points.numpy(), np.full((5, 1), 3.0))

    def test_shape_validation(self):
        rule = make_rule("gh", 3, 2)
        with pytest.raises(ValueError):
            sigma_points(rule, torch.zeros(2, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))
        with pytest.raises(ValueError):
            sigma_points(rule, torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def test_quadrature_integrates_quadratic_under_state(self):
        # E[(a g + b)^2] for g ~ N(mu, s^2) equals a^2 (mu^2 + s^2) + 2 a b mu + b^2
        rule = make_rule("gh", 4, 1)
        mu, s, a, b = 0.7, 1.3, 2.0, -1.0
        weights, points = sigma_points(
            rule,
            torch.tensor([mu], dtype=DTYPE),
            torch.tensor([s], dtype=DTYPE),
        )
        value = float(((weights * (a * points[:, 0] + b) ** 2).sum()).detach())
        exact = a**2 * (mu**2 + s**2) + 2 * a * b * mu + b**2
        assert abs(value - exact) < 1e-12
