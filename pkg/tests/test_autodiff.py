"""Reverse-mode tape tests."""

from collections.abc import Callable

import numpy as np
import pytest

from socialdiff import autodiff as ad
from socialdiff.autodiff import Tape, Tensor
from socialdiff.enums import Activation
from socialdiff.exceptions import NonFiniteError, TapeError
from socialdiff.params import ParameterSet


def numeric_gradient(
    fn: Callable[[Tape, Tensor], Tensor], x: np.ndarray, eps: float = 1e-6
) -> np.ndarray:
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        values = []
        for sign in (1.0, -1.0):
            shifted = x.copy()
            shifted[index] += sign * eps
            tape = Tape(recording=False)
            values.append(float(fn(tape, tape.constant(shifted)).value))
        grad[index] = (values[0] - values[1]) / (2 * eps)
    return grad


def analytic_gradient(
    fn: Callable[[Tape, Tensor], Tensor], x: np.ndarray
) -> np.ndarray:
    tape = Tape()
    leaf = tape.watch("x", x)
    return tape.gradients(fn(tape, leaf))["x"]


def check(fn: Callable[[Tape, Tensor], Tensor], x: np.ndarray) -> None:
    np.testing.assert_allclose(
        analytic_gradient(fn, x), numeric_gradient(fn, x), atol=1e-7
    )


RNG = np.random.default_rng(3)
MATRIX = RNG.normal(size=(4, 3))
OTHER = RNG.normal(size=(4, 3))
SQUARE = RNG.normal(size=(3, 2))


class TestOperationGradients:
    def test_add_sub_mul(self) -> None:
        def fn(tape: Tape, x: Tensor) -> Tensor:
            other = tape.constant(OTHER)
            return ad.total((x + other) * (x - other))

        check(fn, MATRIX)

    def test_matmul_both_sides(self) -> None:
        def left(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(x @ tape.constant(SQUARE))

        def right(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(tape.constant(MATRIX) @ x)

        check(left, MATRIX)
        check(right, SQUARE)

    def test_add_row(self) -> None:
        def fn(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(ad.add_row(tape.constant(MATRIX), x))

        check(fn, RNG.normal(size=3))

    def test_concat_along_both_axes(self) -> None:
        def columns(tape: Tape, x: Tensor) -> Tensor:
            joined = ad.concat([x, tape.constant(OTHER), x])
            return ad.square_sum(joined @ tape.constant(np.ones((9, 1))))

        def rows(tape: Tape, x: Tensor) -> Tensor:
            vector = ad.reshape(x @ tape.constant(np.ones((3, 1))), (4,))
            return ad.square_sum(ad.concat([vector, vector * vector], axis=0))

        check(columns, MATRIX)
        check(rows, MATRIX)

    def test_row_gather_with_repeats(self) -> None:
        def fn(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(ad.row_gather(x, np.array([0, 2, 2, 3, 0])))

        check(fn, MATRIX)

    def test_segment_sum_and_scale_rows(self) -> None:
        segments = np.array([1, 0, 1, 1])
        weights = RNG.normal(size=4)

        def through_rows(tape: Tape, x: Tensor) -> Tensor:
            scaled = ad.scale_rows(tape.constant(weights), x)
            return ad.square_sum(ad.segment_sum(scaled, segments, 3))

        def through_weights(tape: Tape, w: Tensor) -> Tensor:
            scaled = ad.scale_rows(w, tape.constant(MATRIX))
            return ad.square_sum(ad.segment_sum(scaled, segments, 3))

        check(through_rows, MATRIX)
        check(through_weights, weights)

    def test_row_dot(self) -> None:
        def fn(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(ad.row_dot(x, tape.constant(OTHER)))

        check(fn, MATRIX)

    def test_sigmoid_and_log_sigmoid(self) -> None:
        vector = RNG.normal(size=6) * 3

        def fn(tape: Tape, x: Tensor) -> Tensor:
            return ad.total(ad.log_sigmoid(x)) + ad.square_sum(ad.sigmoid(x))

        check(fn, vector)

    @pytest.mark.parametrize("kind", list(Activation))
    def test_activations(self, kind: Activation) -> None:
        # Keep away from zero so the leaky kink is never straddled.
        values = np.array([-2.0, -0.7, 0.4, 1.3, 2.5])

        def fn(tape: Tape, x: Tensor) -> Tensor:
            return ad.square_sum(ad.activation(x, kind))

        check(fn, values)

    def test_exp_normalize_segments(self) -> None:
        segments = np.array([0, 0, 2, 2, 2, 1])
        target = RNG.normal(size=6)

        def fn(tape: Tape, x: Tensor) -> Tensor:
            weights = ad.exp_normalize(x, segments, 3)
            return ad.total(weights * tape.constant(target))

        check(fn, RNG.normal(size=6))


class TestBackwardLinearity:
    def test_weighted_sum_of_losses(self) -> None:
        x = RNG.normal(size=(4, 3))
        w = RNG.normal(size=(3, 2))

        def first(tape: Tape, leaf: Tensor) -> Tensor:
            return ad.total(ad.sigmoid(leaf @ tape.constant(w)))

        def second(tape: Tape, leaf: Tensor) -> Tensor:
            return ad.square_sum(ad.activation(leaf, Activation.TANH))

        def combined(tape: Tape, leaf: Tensor) -> Tensor:
            return ad.scale(first(tape, leaf), 2.5) + ad.scale(
                second(tape, leaf), -0.75
            )

        np.testing.assert_allclose(
            analytic_gradient(combined, x),
            2.5 * analytic_gradient(first, x)
            - 0.75 * analytic_gradient(second, x),
            atol=1e-12,
        )

    @pytest.mark.parametrize("factor", [3.0, -0.5, 0.0])
    def test_scaled_upstream_gradient(self, factor: float) -> None:
        x = RNG.normal(size=5)

        def loss(tape: Tape, leaf: Tensor) -> Tensor:
            weights = ad.exp_normalize(leaf, np.array([0, 0, 1, 1, 1]), 2)
            return ad.total(ad.log_sigmoid(weights * leaf))

        def scaled(tape: Tape, leaf: Tensor) -> Tensor:
            return ad.scale(loss(tape, leaf), factor)

        np.testing.assert_allclose(
            analytic_gradient(scaled, x),
            factor * analytic_gradient(loss, x),
            atol=1e-12,
        )


class TestExpNormalize:
    def test_segments_sum_to_one(self) -> None:
        tape = Tape(recording=False)
        segments = np.array([0, 1, 1, 3, 3, 3])
        weights = ad.exp_normalize(
            tape.constant(RNG.normal(size=6)), segments, 4
        ).value
        sums = np.bincount(segments, weights=weights, minlength=4)
        np.testing.assert_allclose(sums, [1.0, 1.0, 0.0, 1.0])
        assert np.all(weights >= 0)

    def test_large_scores_are_stable(self) -> None:
        tape = Tape(recording=False)
        weights = ad.exp_normalize(
            tape.constant(np.array([1000.0, 999.0, -1000.0]))
        ).value
        assert np.all(np.isfinite(weights))
        assert weights.sum() == pytest.approx(1.0)
        assert weights[0] > weights[1] > weights[2]

    def test_singleton_segment_is_one(self) -> None:
        tape = Tape(recording=False)
        weights = ad.exp_normalize(
            tape.constant(np.array([5.0, -3.0])), np.array([0, 1]), 2
        ).value
        np.testing.assert_array_equal(weights, [1.0, 1.0])


class TestTapeDiscipline:
    def test_backward_twice_raises(self) -> None:
        tape = Tape()
        x = tape.watch("x", MATRIX)
        loss = ad.square_sum(x)
        tape.gradients(loss)
        assert tape.consumed
        with pytest.raises(TapeError, match="already"):
            tape.gradients(loss)

    def test_unrecorded_tape_cannot_differentiate(self) -> None:
        tape = Tape(recording=False)
        x = tape.watch("x", MATRIX)
        with pytest.raises(TapeError, match="recording disabled"):
            tape.gradients(ad.square_sum(x))

    def test_non_scalar_loss_raises(self) -> None:
        tape = Tape()
        x = tape.watch("x", MATRIX)
        with pytest.raises(TapeError, match="scalar"):
            tape.gradients(x + x)

    def test_watch_twice_raises(self) -> None:
        tape = Tape()
        tape.watch("x", MATRIX)
        with pytest.raises(TapeError, match="already watched"):
            tape.watch("x", MATRIX)

    def test_mixing_tapes_raises(self) -> None:
        first, second = Tape(), Tape()
        a = first.watch("a", MATRIX)
        b = second.watch("b", OTHER)
        with pytest.raises(TapeError, match="different tapes"):
            _ = a + b

    def test_non_finite_value_raises(self) -> None:
        tape = Tape()
        x = tape.watch("x", np.array([0.0, 1.0]))
        with pytest.raises(NonFiniteError) as excinfo:
            ad.scale(x, np.inf)
        assert excinfo.value.op == "scale"

    def test_missing_leaf_raises(self) -> None:
        with pytest.raises(TapeError, match="not watched"):
            ad.lookup({}, "W1")

    def test_unreached_parameters_get_zero_gradients(self) -> None:
        params = ParameterSet({"P": MATRIX, "Q": OTHER})
        tape = Tape()
        leaves = tape.watch_parameters(params)
        grads = tape.backward(ad.square_sum(leaves["P"]), params)
        np.testing.assert_allclose(grads["P"], 2 * MATRIX)
        np.testing.assert_array_equal(grads["Q"], np.zeros_like(OTHER))
        assert grads.congruent_with(params)

    def test_gradients_accumulate_over_reuse(self) -> None:
        tape = Tape()
        x = tape.watch("x", np.array([3.0]))
        loss = ad.total(x * x + x)
        assert tape.gradients(loss)["x"] == pytest.approx([7.0])

    def test_shape_mismatch_raises(self) -> None:
        tape = Tape(recording=False)
        with pytest.raises(ValueError, match="shape mismatch"):
            _ = tape.constant(MATRIX) @ tape.constant(OTHER)
