import math

import numpy as np
import pytest

from stochastic_fd.errors import LatticeMismatchError
from stochastic_fd.grid import (
    Direction,
    GridFunction,
    Lattice,
    discrete_sobolev_norm,
    forward_diff,
    generates_integer_lattice,
    inner,
    l2h_norm,
    mean_op,
    multi_diff,
    multi_mean,
    odd_part,
    p_op,
    periodic_ladder,
    restrict,
    second_diff,
    shift,
    sup_norm,
    symmetric_diff,
)
from stochastic_fd.spectral import difference_norm_bound


def random_function(lattice: Lattice, seed: int = 0) -> GridFunction:
    rng = np.random.default_rng(seed)
    return GridFunction(lattice, rng.standard_normal(lattice.shape))


@pytest.fixture
def lattice():
    return Lattice.periodic(1, 16)


@pytest.fixture
def lattice_2d():
    return Lattice.periodic(2, 8)


def test_lattice_validation():
    with pytest.raises(ValueError):
        Lattice(1, 3, 0.1)
    with pytest.raises(ValueError):
        Lattice(1, 8, -0.1)
    with pytest.raises(ValueError):
        Lattice(0, 8, 0.1)


def test_lattice_refine_and_ratio():
    coarse = Lattice.periodic(1, 8)
    fine = coarse.refine()
    assert fine.points_per_axis == 16
    assert fine.spacing == pytest.approx(coarse.spacing / 2)
    assert fine.refinement_ratio(coarse) == 2
    with pytest.raises(LatticeMismatchError):
        coarse.refinement_ratio(fine)


def test_periodic_ladder():
    ladder = periodic_ladder(1, 32, 4)
    assert [i.points_per_axis for i in ladder] == [32, 64, 128, 256]
    np.testing.assert_allclose([i.period for i in ladder], 2 * math.pi)


def test_shift_zero_direction_is_identity(lattice):
    f = random_function(lattice)
    np.testing.assert_array_equal(shift(f, 0).values, f.values)


def test_shift_wraps_periodically():
    f = GridFunction(Lattice(1, 4, 1.0), [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(shift(f, 1, 1).values, [1.0, 2.0, 3.0, 0.0])


def test_shift_inverse(lattice_2d):
    f = random_function(lattice_2d)
    back = shift(shift(f, (1, 2), 1), (1, 2), -1)
    np.testing.assert_array_equal(back.values, f.values)


def test_direction_dimension_mismatch(lattice):
    f = random_function(lattice)
    with pytest.raises(LatticeMismatchError):
        shift(f, (1, 0))


def test_forward_diff_constant(lattice):
    f = GridFunction.constant(lattice, 3.5)
    assert sup_norm(forward_diff(f, 1)) == 0


def test_forward_diff_sine():
    lattice = Lattice(1, 8, math.pi / 4)
    h = lattice.spacing
    f = GridFunction.sample(lattice, np.sin)
    x = lattice.coordinates()[0]
    np.testing.assert_allclose(forward_diff(f, 1).values, (np.sin(x + h) - np.sin(x)) / h, atol=1e-14)


def test_symmetric_diff_cosine(lattice):
    h = lattice.spacing
    f = GridFunction.sample(lattice, np.cos)
    x = lattice.coordinates()[0]
    np.testing.assert_allclose(symmetric_diff(f, 1).values, -np.sin(x) * math.sin(h) / h, atol=1e-13)


def test_symmetric_diff_sign_invariant(lattice):
    f = random_function(lattice)
    np.testing.assert_allclose(symmetric_diff(f, 1).values, symmetric_diff(f, -1).values * -1)


def test_second_diff_constant(lattice):
    assert sup_norm(second_diff(GridFunction.constant(lattice, 2.0), 1)) == 0


def test_mean_and_odd_zero_direction(lattice):
    f = random_function(lattice)
    np.testing.assert_array_equal(mean_op(f, 0).values, f.values)
    assert sup_norm(odd_part(f, 0)) == 0
    assert sup_norm(p_op(f, 0)) == 0


def test_multi_diff_empty_and_order(lattice_2d):
    f = random_function(lattice_2d)
    np.testing.assert_array_equal(multi_diff(f, []).values, f.values)
    np.testing.assert_array_equal(multi_mean(f, []).values, f.values)
    a = multi_diff(f, [(1, 0), (1, 1)])
    b = multi_diff(f, [(1, 1), (1, 0)])
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_l2h_norm_constant():
    f = GridFunction.constant(Lattice(1, 10, 0.5), 1.0)
    assert l2h_norm(f) == pytest.approx(math.sqrt(5))


def test_sobolev_norm_order_zero(lattice):
    f = random_function(lattice)
    assert discrete_sobolev_norm(f, 0, [1]) == pytest.approx(l2h_norm(f))


def test_lattice_mismatch_in_arithmetic():
    a = GridFunction.zeros(Lattice.periodic(1, 8))
    b = GridFunction.zeros(Lattice.periodic(1, 16))
    with pytest.raises(LatticeMismatchError):
        a + b


def test_values_are_read_only(lattice):
    f = random_function(lattice)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_restrict_takes_coarse_nodes():
    coarse = Lattice.periodic(1, 8)
    fine_f = GridFunction.sample(coarse.refine(), np.sin)
    np.testing.assert_allclose(restrict(fine_f, coarse).values, GridFunction.sample(coarse, np.sin).values)


def test_generates_integer_lattice():
    assert generates_integer_lattice([(1, 0), (0, 1)], 2)
    assert generates_integer_lattice([(1, 1), (1, 0)], 2)
    assert not generates_integer_lattice([(2, 0), (0, 1)], 2)
    assert not generates_integer_lattice([(1, 1)], 2)


def test_csv_and_binary_dump(tmp_path, lattice_2d):
    f = random_function(lattice_2d)
    f.to_csv(str(tmp_path / "f.csv"))
    g = GridFunction.from_csv(str(tmp_path / "f.csv"))
    assert g.lattice == f.lattice
    np.testing.assert_array_equal(g.values, f.values)
    f.to_binary(str(tmp_path / "f.bin"))
    np.testing.assert_array_equal(GridFunction.from_binary(str(tmp_path / "f.bin")).values, f.values)


IDENTITY_SAMPLES = 100
IDENTITY_RTOL = 1e-13
DIRECTIONS: dict[int, list[Direction]] = {
    1: [(1,), (-1,), (2,), (3,)],
    2: [(1, 0), (0, 1), (1, 1), (1, -1), (2, 1), (-1, 2)],
}


def random_cases(dim: int):
    """Seeded (u, v, lambda, mu) samples on a small periodic lattice."""
    lattice = Lattice.periodic(dim, 16 if dim == 1 else 8)
    directions = DIRECTIONS[dim]
    rng = np.random.default_rng(100 + dim)
    for _ in range(IDENTITY_SAMPLES):
        u = GridFunction(lattice, rng.standard_normal(lattice.shape))
        v = GridFunction(lattice, rng.standard_normal(lattice.shape))
        lam, mu = (directions[i] for i in rng.integers(len(directions), size=2))
        yield u, v, lam, mu


def assert_identity(lhs: GridFunction, rhs: GridFunction, *terms: GridFunction) -> None:
    scale = max(sup_norm(i) for i in (lhs, rhs, *terms))
    assert sup_norm(lhs - rhs) <= IDENTITY_RTOL * scale


def assert_scalar_identity(lhs: float, rhs: float, scale: float) -> None:
    assert abs(lhs - rhs) <= IDENTITY_RTOL * scale


@pytest.mark.parametrize("dim", [1, 2])
def test_second_diff_factorizations(dim):
    for u, _, lam, _ in random_cases(dim):
        h = u.lattice.spacing
        laplace = second_diff(u, lam)
        plus, minus = forward_diff(u, lam, 1), forward_diff(u, lam, -1)
        assert_identity(laplace, forward_diff(minus, lam, 1), plus, minus)
        assert_identity(laplace, (plus - minus) / h, plus, minus)
        assert_identity(p_op(u, lam), (h / 2) * laplace)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("sign", [1, -1])
def test_forward_diff_product_rule(dim, sign):
    for u, v, lam, _ in random_cases(dim):
        step = sign * u.lattice.spacing
        du, dv = forward_diff(u, lam, sign), forward_diff(v, lam, sign)
        rhs = v * du + u * dv + step * du * dv
        assert_identity(forward_diff(u * v, lam, sign), rhs, v * du, u * dv, step * du * dv)


@pytest.mark.parametrize("dim", [1, 2])
def test_symmetric_diff_product_rule(dim):
    for u, v, lam, _ in random_cases(dim):
        a = symmetric_diff(u, lam) * mean_op(v, lam)
        b = mean_op(u, lam) * symmetric_diff(v, lam)
        assert_identity(symmetric_diff(u * v, lam), a + b, a, b)


@pytest.mark.parametrize("dim", [1, 2])
def test_mean_op_identity(dim):
    for u, _, lam, _ in random_cases(dim):
        h = u.lattice.spacing
        correction = (h**2 / 2) * second_diff(u, lam)
        assert_identity(mean_op(u, lam), u + correction, correction)


@pytest.mark.parametrize("dim", [1, 2])
def test_mean_op_telescoping(dim):
    rng = np.random.default_rng(7)
    directions = DIRECTIONS[dim]
    for u, _, _, _ in random_cases(dim):
        h = u.lattice.spacing
        for m in (1, 2, 3):
            alpha = [directions[i] for i in rng.integers(len(directions), size=m)]
            terms = [p_op(multi_mean(u, alpha[i + 1 :]), alpha[i]) for i in range(m)]
            total = GridFunction.zeros(u.lattice)
            for term in terms:
                total = total + term
            assert_identity(multi_mean(u, alpha), u + h * total, *(h * i for i in terms))


@pytest.mark.parametrize("dim", [1, 2])
def test_mean_op_product_split(dim):
    for a, u, _, mu in random_cases(dim):
        h = a.lattice.spacing
        iu = mean_op(u, mu)
        parts = [a * iu, h * p_op(a, mu) * iu, h * symmetric_diff(a, mu) * odd_part(u, mu)]
        assert_identity(mean_op(a * u, mu), parts[0] + parts[1] + parts[2], *parts)


@pytest.mark.parametrize("dim", [1, 2])
def test_mean_op_product_rule(dim):
    for a, u, lam, _ in random_cases(dim):
        even = mean_op(a, lam) * mean_op(u, lam)
        odd = odd_part(a, lam) * odd_part(u, lam)
        assert_identity(mean_op(a * u, lam), even + odd, even, odd)


@pytest.mark.parametrize("dim", [1, 2])
def test_general_leibniz(dim):
    for u, v, l1, l2 in random_cases(dim):
        lhs = multi_diff(u * v, [l1, l2])
        # sub-multi-indices mu of (l1, l2) paired with their complements
        subsets = [([], [l1, l2]), ([l1], [l2]), ([l2], [l1]), ([l1, l2], [])]
        terms = [
            multi_diff(multi_mean(u, rest), mu) * multi_diff(multi_mean(v, mu), rest)
            for mu, rest in subsets
        ]
        rhs = terms[0] + terms[1] + terms[2] + terms[3]
        assert_identity(lhs, rhs, *terms)


@pytest.mark.parametrize("dim", [1, 2])
def test_adjoints_on_torus(dim):
    for u, v, lam, _ in random_cases(dim):
        for op, sign in ((symmetric_diff, -1), (mean_op, 1), (odd_part, -1)):
            lhs, rhs = inner(op(u, lam), v), sign * inner(u, op(v, lam))
            scale = l2h_norm(op(u, lam)) * l2h_norm(v) + l2h_norm(u) * l2h_norm(op(v, lam))
            assert_scalar_identity(lhs, rhs, scale)


@pytest.mark.parametrize("dim", [1, 2])
def test_mean_and_odd_part_are_contractions(dim):
    for u, _, lam, mu in random_cases(dim):
        norm = l2h_norm(u)
        assert l2h_norm(mean_op(u, mu)) <= norm * (1 + IDENTITY_RTOL)
        assert l2h_norm(odd_part(u, lam)) <= norm * (1 + IDENTITY_RTOL)


def smooth_trig_polynomial(lattice: Lattice, rng: np.random.Generator) -> GridFunction:
    """A few random Fourier modes, all well below the Nyquist band."""
    coordinates = lattice.coordinates()
    limit = lattice.points_per_axis // 4
    values = np.zeros(lattice.shape)
    for _ in range(4):
        k = rng.integers(-limit, limit + 1, size=lattice.dim)
        phase = sum(int(c) * x for c, x in zip(k, coordinates))
        values = values + rng.standard_normal() * np.cos(phase + rng.uniform(0, 2 * math.pi))
    return GridFunction(lattice, values)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("kind", ["symmetric", "forward"])
def test_difference_norm_bound_on_grid_functions(dim, kind):
    lattice = Lattice.periodic(dim, 32 if dim == 1 else 16)
    directions = DIRECTIONS[dim]
    rng = np.random.default_rng(11)
    for _ in range(IDENTITY_SAMPLES):
        f = smooth_trig_polynomial(lattice, rng)
        for k in (1, 2, 3):
            alpha = [directions[i] for i in rng.integers(len(directions), size=k)]
            lhs, rhs = difference_norm_bound(f, alpha, kind)
            assert lhs <= rhs * (1 + 1e-6)
