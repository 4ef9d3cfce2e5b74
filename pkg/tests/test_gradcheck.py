import numpy as np
import pytest

from ianet import gradcheck as gc
from ianet import ops
from ianet.block import IABlockParams, IAConfig, cia_forward, ia_block, sia_forward
from ianet.tensor import Tensor, perturbed_gradients


class TestGradcheck:
    def test_sum_of_squares(self, rng):
        err = gc.gradcheck(lambda x: ops.sum(ops.mul(x, x)), [rng.standard_normal((3, 4))])
        assert err < 1e-8

    def test_softmax_first_column(self, rng):
        def fn(x):
            S = ops.softmax_rows(x)
            return ops.sum(ops.matmul(S, Tensor(np.eye(5)[:, :1])))

        assert gc.gradcheck(fn, [rng.standard_normal((3, 5))]) < 1e-6

    def test_detects_wrong_gradient(self, rng):
        with perturbed_gradients(["exp"]):
            err = gc.gradcheck(lambda x: ops.sum(ops.exp(x)), [rng.standard_normal(4)])
        assert err > 1e-3

    def test_relative_error_denominator_floor(self):
        assert gc.relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(0.1)
        assert gc.relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)

    def test_non_scalar_uses_fixed_projection(self, rng):
        x = rng.standard_normal((2, 3))
        a = gc.gradcheck(lambda t: ops.exp(t), [x], seed=3)
        b = gc.gradcheck(lambda t: ops.exp(t), [x], seed=3)
        assert a == b < 1e-6

    def test_inputs_not_mutated(self, rng):
        x = rng.standard_normal(5)
        before = x.copy()
        gc.gradcheck(lambda t: ops.sum(ops.exp(t)), [x])
        np.testing.assert_array_equal(x, before)


class TestSuite:
    def test_every_op_listed_once(self):
        names = gc.differentiable_ops()
        assert len(names) == len(set(names))
        expected = {
            "add", "sub", "mul", "neg", "maximum", "logaddexp", "exp", "log", "relu", "reshape",
            "transpose", "sum", "mean", "matmul", "softmax_rows", "log_softmax", "cross_entropy",
            "batchnorm2d", "conv2d", "global_avg_pool", "shifted_patch_sum",
        }
        assert set(names) == expected

    def test_suite_covers_every_recorded_op(self):
        import inspect
        import re

        recorded = set(re.findall(r'_make\(\s*"([a-z_0-9]+)"', inspect.getsource(ops)))
        assert recorded == set(gc.differentiable_ops())

    def test_clean_run_passes(self):
        report = gc.run_suite()
        assert gc.failures(report) == []
        assert report[gc.COMPOSITE_NAME] < gc.COMPOSITE_THRESHOLD

    @pytest.mark.parametrize("op", ["matmul", "batchnorm2d", "shifted_patch_sum", "relu"])
    def test_sabotage_named(self, op):
        with perturbed_gradients([op]):
            bad = gc.failures(gc.run_suite())
        assert op in bad
        assert set(bad) <= {op, gc.COMPOSITE_NAME}


class TestBlockGradients:
    """Gradients of the IA modules on 1x3x2x2 inputs."""

    cfg = IAConfig(patch_sizes=(1, 2), sigma1=1.0, sigma2=2.0)

    def test_sia(self, rng):
        assert gc.gradcheck(lambda F: sia_forward(F, self.cfg), [rng.standard_normal((1, 3, 2, 2))]) < 1e-4

    def test_cia(self, rng):
        assert gc.gradcheck(cia_forward, [rng.standard_normal((1, 3, 2, 2))]) < 1e-4

    @pytest.mark.parametrize("arrangement", ["SIA_THEN_CIA", "CIA_THEN_SIA", "PARALLEL"])
    def test_ia_block(self, rng, arrangement):
        cfg = IAConfig(patch_sizes=(1, 2), sigma1=1.0, sigma2=2.0, arrangement=arrangement)
        g1, b1, g2, b2 = (rng.uniform(0.5, 1.5, 3) for _ in range(4))

        def fn(F, g1, b1, g2, b2):
            params = IABlockParams.fresh(3)
            params.bn_sia.gamma, params.bn_sia.beta = g1, b1
            params.bn_cia.gamma, params.bn_cia.beta = g2, b2
            params.bn_sia.state = params.bn_cia.state = None
            return ia_block(F, cfg, params, training=True)

        F = rng.standard_normal((2, 3, 2, 2))
        assert gc.gradcheck(fn, [F, g1, b1, g2, b2]) < 1e-4
