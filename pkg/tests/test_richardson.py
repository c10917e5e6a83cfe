from fractions import Fraction

import numpy as np
import pytest

from stochastic_fd.errors import PathMismatchError
from stochastic_fd.grid import GridFunction, Lattice, periodic_ladder
from stochastic_fd.integrator import ModeState, Trajectory, fourier_exact_solve
from stochastic_fd.richardson import extrapolate, order_boost, weights
from stochastic_fd.scheme import StencilSpec
from stochastic_fd.wiener import WienerPath


def test_two_level_weights():
    w = weights(1, 2)
    assert w.coefficients == (Fraction(-1, 3), Fraction(4, 3))
    assert str(w) == "-1/3, 4/3"
    assert weights(1, 1).coefficients == (Fraction(-1), Fraction(2))


def test_order_zero_weight():
    assert weights(0).coefficients == (Fraction(1),)


@pytest.mark.parametrize("order", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("power_step", [1, 2])
def test_residuals_vanish_exactly(order, power_step):
    w = weights(order, power_step)
    assert all(r == 0 for r in w.residuals())
    assert sum(w.coefficients) == 1


def test_invalid_arguments():
    with pytest.raises(ValueError):
        weights(-1)
    with pytest.raises(ValueError):
        weights(1, 3)


def synthetic(lattice: Lattice) -> Trajectory:
    h = lattice.spacing
    x = lattice.coordinates()[0]
    values = np.sin(x) + h**2 * np.cos(3 * x)
    return Trajectory(lattice, [1.0], [GridFunction(lattice, values)], (0, 0))


def test_extrapolation_cancels_leading_term():
    ladder = periodic_ladder(1, 16, 2)
    v = extrapolate([synthetic(i) for i in ladder], weights(1))
    x = ladder[0].coordinates()[0]
    np.testing.assert_allclose(v.at(1.0).values, np.sin(x), atol=1e-12)


def test_order_zero_is_identity():
    u = synthetic(Lattice.periodic(1, 16))
    v = extrapolate([u], weights(0))
    np.testing.assert_array_equal(v.at(1.0).values, u.at(1.0).values)


def test_wrong_number_of_solutions():
    ladder = periodic_ladder(1, 16, 2)
    with pytest.raises(ValueError):
        extrapolate([synthetic(ladder[0])], weights(1))


def test_mismatched_realizations_rejected():
    ladder = periodic_ladder(1, 16, 2)
    a = synthetic(ladder[0])
    b = synthetic(ladder[1])
    other = Trajectory(b.lattice, b.record_times, b.states, (1, 0))
    with pytest.raises(PathMismatchError):
        extrapolate([a, other], weights(1))


def test_non_nested_lattices_rejected():
    a = synthetic(Lattice.periodic(1, 16))
    b = synthetic(Lattice.periodic(1, 64))
    with pytest.raises(PathMismatchError):
        extrapolate([a, b], weights(1))


def test_different_record_times_rejected():
    ladder = periodic_ladder(1, 16, 2)
    a = synthetic(ladder[0])
    b = synthetic(ladder[1])
    shifted = Trajectory(b.lattice, [0.5], b.states, b.path_ref)
    with pytest.raises(PathMismatchError):
        extrapolate([a, shifted], weights(1))


def test_extrapolated_example_value():
    spec = StencilSpec.build(1, [0, 1], a={(1, 1): 2.0}, b={1: 2.0})
    modes = [ModeState(1.0, 0.5), ModeState(-1.0, 0.5)]
    path = WienerPath.from_values([0.0, 1.0], [[0.0, 1.0]])
    coarse = Lattice(1, 64, 0.1)
    solutions = [fourier_exact_solve(spec, modes, path, [1.0], i) for i in (coarse, coarse.refine())]
    v = extrapolate(solutions, weights(1))
    assert v.at(1.0).flat[0] == pytest.approx(-0.4161470333, abs=1e-9)


def test_order_boost_pairs():
    ladder = periodic_ladder(1, 16, 3)
    solutions = [synthetic(i) for i in ladder]
    fine = ladder[-1].refine()
    x = fine.coordinates()[0]
    reference = Trajectory(fine, [1.0], [GridFunction(fine, np.sin(x))], (0, 0))
    boosted = order_boost(solutions, weights(1), reference)
    assert [h for h, _ in boosted] == pytest.approx([ladder[0].spacing, ladder[1].spacing])
    assert all(sup_err < 1e-12 and l2_err < 1e-12 for _, (sup_err, l2_err) in boosted)
    with pytest.raises(ValueError):
        order_boost(solutions[:1], weights(1), reference)
