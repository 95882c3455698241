import math

import numpy as np
import pytest

from oracles import central_difference_grads, max_relative_error, unit_rows

from originid.errors import LabelError, OriginIdError
from originid.losses import (
    circle_loss_and_grad,
    cosface_loss_and_grad,
    loss_and_grad,
    softmax_loss_and_grad,
)


def random_instance(rng, b=None, m=None):
    b = b or int(rng.integers(2, 9))
    m = m or int(rng.integers(2, 33))
    gen = unit_rows(rng.standard_normal((b, m)))
    org = unit_rows(rng.standard_normal((b, m)))
    labels = rng.integers(0, b, size=b)
    return gen, org, labels


class TestCosFace:
    def test_perfect_separation(self):
        # cos with own origin 1, with the other -1
        gen = np.array([[1.0, 0.0], [-1.0, 0.0]])
        org = gen.copy()
        loss, _, _ = cosface_loss_and_grad(gen, org, [0, 1], s=64.0, margin=0.0)
        assert loss < 1e-10

    def test_scalar_oracle_all_equal_cosines(self):
        # every cosine is 0: scalar softmax expression computable by hand
        gen = np.array([[1.0, 0.0], [1.0, 0.0]])
        org = np.array([[0.0, 1.0], [0.0, 1.0]])
        s, margin = 2.0, 0.1
        loss, _, _ = cosface_loss_and_grad(gen, org, [0, 1], s=s, margin=margin)
        pos = math.exp(s * (0.0 - margin))
        expected = -math.log(pos / (pos + math.exp(0.0)))
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            gen, org, labels = random_instance(rng)
            s = float(rng.uniform(2, 32))
            margin = float(rng.uniform(0, 0.5))
            loss_fn = lambda g, o, l: cosface_loss_and_grad(g, o, l, s=s, margin=margin)[0]
            _, a_gen, a_org = cosface_loss_and_grad(gen, org, labels, s=s, margin=margin)
            n_gen, n_org = central_difference_grads(loss_fn, gen, org, labels)
            assert max_relative_error(a_gen, n_gen) < 1e-4
            assert max_relative_error(a_org, n_org) < 1e-4


class TestCircle:
    def test_optimum_configuration(self):
        gen = np.array([[1.0, 0.0], [-1.0, 0.0]])
        org = gen.copy()
        loss, _, _ = circle_loss_and_grad(gen, org, [0, 1])
        assert loss < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            gen, org, labels = random_instance(rng)
            gamma = float(rng.uniform(4, 48))
            margin = float(rng.uniform(0.1, 0.4))
            loss_fn = lambda g, o, l: circle_loss_and_grad(g, o, l, gamma=gamma, margin=margin)[0]
            _, a_gen, a_org = circle_loss_and_grad(gen, org, labels, gamma=gamma, margin=margin)
            n_gen, n_org = central_difference_grads(loss_fn, gen, org, labels)
            assert max_relative_error(a_gen, n_gen) < 1e-4
            assert max_relative_error(a_org, n_org) < 1e-4

    def test_needs_negatives(self):
        gen = unit_rows(np.ones((1, 4)))
        with pytest.raises(OriginIdError):
            circle_loss_and_grad(gen, gen, [0])


class TestSoftmax:
    def test_equals_cosface_margin_zero(self):
        rng = np.random.default_rng(23)
        gen, org, labels = random_instance(rng, b=6, m=12)
        a = softmax_loss_and_grad(gen, org, labels, s=17.0)
        b = cosface_loss_and_grad(gen, org, labels, s=17.0, margin=0.0)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(24)
        for _ in range(10):
            gen, org, labels = random_instance(rng)
            s = float(rng.uniform(2, 32))
            loss_fn = lambda g, o, l: softmax_loss_and_grad(g, o, l, s=s)[0]
            _, a_gen, a_org = softmax_loss_and_grad(gen, org, labels, s=s)
            n_gen, n_org = central_difference_grads(loss_fn, gen, org, labels)
            assert max_relative_error(a_gen, n_gen) < 1e-4
            assert max_relative_error(a_org, n_org) < 1e-4


class TestSharedContracts:
    @pytest.mark.parametrize("kind", ["cosface", "circle", "softmax"])
    def test_permutation_equivariance(self, kind):
        rng = np.random.default_rng(25)
        gen, org, labels = random_instance(rng, b=7, m=9)
        loss, g_gen, _ = loss_and_grad(kind, gen, org, labels, scale=16.0, margin=0.2)
        perm = rng.permutation(7)
        loss_p, g_gen_p, _ = loss_and_grad(kind, gen[perm], org, labels[perm],
                                           scale=16.0, margin=0.2)
        assert loss == pytest.approx(loss_p, rel=1e-12)
        np.testing.assert_allclose(g_gen[perm], g_gen_p, rtol=1e-12, atol=1e-15)

    def test_label_out_of_range(self):
        gen = unit_rows(np.random.default_rng(0).standard_normal((3, 4)))
        with pytest.raises(LabelError):
            cosface_loss_and_grad(gen, gen, [0, 1, 3])

    def test_non_unit_rows_rejected(self):
        gen = unit_rows(np.random.default_rng(0).standard_normal((3, 4)))
        bad = gen.copy()
        bad[1] *= 1.01
        with pytest.raises(OriginIdError):
            cosface_loss_and_grad(bad, gen, [0, 1, 2])

    def test_unknown_kind(self):
        gen = unit_rows(np.random.default_rng(0).standard_normal((2, 4)))
        with pytest.raises(OriginIdError):
            loss_and_grad("triplet", gen, gen, [0, 1], scale=2.0, margin=0.0)

    def test_shared_origin_slots(self):
        # two generated rows may point at the same origin row
        rng = np.random.default_rng(26)
        gen = unit_rows(rng.standard_normal((4, 8)))
        org = unit_rows(rng.standard_normal((3, 8)))
        labels = np.array([0, 0, 2, 1])
        loss, g_gen, g_org = cosface_loss_and_grad(gen, org, labels, s=8.0, margin=0.1)
        assert math.isfinite(loss)
        assert g_gen.shape == (4, 8) and g_org.shape == (3, 8)
