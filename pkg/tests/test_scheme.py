import math

import numpy as np
import pytest

from stochastic_fd.errors import AdmissibilityError
from stochastic_fd.grid import GridFunction, Lattice, forward_diff, periodic_ladder, sup_norm
from stochastic_fd.scheme import (
    ProblemData,
    StencilSpec,
    TargetPDE,
    apply_L,
    apply_M,
    consistency_residual,
    data_norm,
    from_pde_central,
    from_pde_upwind,
    operator_consistency_order,
    parabolicity_report,
)


def example_spec() -> StencilSpec:
    return StencilSpec.build(1, [0, 1], a={(1, 1): 2.0}, b={1: 2.0})


@pytest.fixture
def lattice():
    return Lattice.periodic(1, 32)


def test_build_collects_directions():
    spec = StencilSpec.build(2, a={((1, 0), (0, 1)): 0.5})
    assert spec.directions == ((0, 0), (0, 1), (1, 0))
    assert spec.a_field((0, 1), (1, 0)).constant_value == 0.5


def test_build_rejects_conflicting_mirror():
    with pytest.raises(ValueError):
        StencilSpec.build(1, a={(0, 1): 1.0, (1, 0): 2.0})


def test_build_rejects_p_on_zero_direction():
    with pytest.raises(ValueError):
        StencilSpec.build(1, p={0: 1.0})


def test_build_rejects_non_generating_directions():
    with pytest.raises(ValueError):
        StencilSpec.build(1, [2], a={(2, 2): 1.0})


def test_apply_L_wide_stencil(lattice):
    rng = np.random.default_rng(0)
    f = GridFunction(lattice, rng.standard_normal(lattice.shape))
    h = lattice.spacing
    v = f.values
    expected = 2 * (np.roll(v, -2) - 2 * v + np.roll(v, 2)) / (4 * h**2)
    np.testing.assert_allclose(apply_L(example_spec(), 0.0, f).values, expected, atol=1e-9)


def test_apply_L_zero_and_one_sided(lattice):
    f = GridFunction.sample(lattice, np.sin)
    assert sup_norm(apply_L(StencilSpec.build(1), 0.0, f)) == 0
    spec = StencilSpec.build(1, p={1: 1.0})
    np.testing.assert_allclose(apply_L(spec, 0.0, f).values, forward_diff(f, 1).values)


def test_apply_M_example(lattice):
    h = lattice.spacing
    f = GridFunction.sample(lattice, np.cos)
    (m,) = apply_M(example_spec(), 0.0, f)
    x = lattice.coordinates()[0]
    np.testing.assert_allclose(m.values, -2 * np.sin(x) * math.sin(h) / h, atol=1e-13)


def test_apply_M_zero_direction_and_no_noise(lattice):
    f = GridFunction.sample(lattice, np.cos)
    (m,) = apply_M(StencilSpec.build(1, b={0: 1.0}), 0.0, f)
    np.testing.assert_array_equal(m.values, f.values)
    assert [sup_norm(i) for i in apply_M(StencilSpec.build(1, driver_count=2), 0.0, f)] == [0, 0]


def test_consistency_central_random_pde():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((3, 3))
    a = a + a.T
    pde = TargetPDE.build(
        2,
        a={(i, j): float(a[i, j]) for i in range(3) for j in range(i, 3)},
        b={i: float(rng.standard_normal()) for i in range(3)},
    )
    assert consistency_residual(from_pde_central(pde), pde) <= 1e-14


def test_consistency_detects_perturbation():
    pde = TargetPDE.build(1, a={(1, 1): 1.0})
    spec = StencilSpec.build(1, a={(1, 1): 2.0})
    assert consistency_residual(spec, pde) >= 1 - 1e-14


def test_consistency_variable_coefficients():
    pde = TargetPDE.build(1, a={(1, 1): "1 + 0.5*sin(x)", (0, 1): "0.2*cos(x)"}, b={1: "0.3"})
    spec = from_pde_central(pde)
    samples = [(0.0,), (1.0,), (2.5,)]
    assert consistency_residual(spec, pde, samples=samples) <= 1e-14


def test_parabolicity_example_is_degenerate():
    report = parabolicity_report(example_spec())
    assert report.passed
    assert report.min_eigenvalue == pytest.approx(0.0, abs=1e-14)


def test_parabolicity_failure_and_identity():
    failing = parabolicity_report(StencilSpec.build(1, a={(1, 1): 1.0}, b={1: 2.0}))
    assert not failing.passed
    assert failing.min_eigenvalue == pytest.approx(-1.0)
    identity = parabolicity_report(StencilSpec.build(2, a={((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 1.0}))
    assert identity.passed
    assert identity.min_eigenvalue == pytest.approx(1.0)


def test_parabolicity_negative_tol_rejected():
    with pytest.raises(ValueError):
        parabolicity_report(example_spec(), tol=-1.0)


def test_central_heat_and_zero_pde():
    spec = from_pde_central(TargetPDE.build(1, a={(1, 1): 1.0}))
    assert spec.nonzero_directions == ((1,),)
    assert spec.a_field(1, 1).constant_value == 1.0
    zero = from_pde_central(TargetPDE.build(1))
    assert not zero.a and not zero.b and not zero.p


def test_upwind_coefficients():
    pde = TargetPDE.build(1, a={(0, 1): 0.25, (1, 1): 1.0})
    spec = from_pde_upwind(pde, [0.25])
    assert spec.p_field(1).constant_value == pytest.approx(0.5)
    assert spec.q_field(1).constant_value == pytest.approx(0.0)
    assert spec.a_field(0, 1) is None
    assert consistency_residual(spec, pde) <= 1e-14


def test_upwind_without_first_order_terms():
    spec = from_pde_upwind(TargetPDE.build(1, a={(1, 1): 1.0}), [0.0])
    assert spec.p_field(1).constant_value == 0
    assert spec.q_field(1).constant_value == 0


def test_upwind_inadmissible_theta():
    pde = TargetPDE.build(1, a={(0, 1): 0.5})
    with pytest.raises(AdmissibilityError) as e:
        from_pde_upwind(pde, [0.1])
    assert e.value.gamma == 1


def test_upwind_variable_coefficients_checked_on_lattice():
    pde = TargetPDE.build(1, a={(0, 1): "0.5*sin(x)"})
    from_pde_upwind(pde, [0.5])
    with pytest.raises(AdmissibilityError):
        from_pde_upwind(pde, [0.4])


def test_operator_consistency_order_central():
    pde = TargetPDE.build(1, a={(1, 1): 1.0})
    lattices = periodic_ladder(1, 32, 3)
    fit = operator_consistency_order(
        from_pde_central(pde), pde, lambda l: GridFunction.sample(l, np.sin), lattices
    )
    assert 1.8 <= fit.slope <= 2.2


def test_operator_consistency_order_upwind():
    pde = TargetPDE.build(1, a={(0, 1): 0.25, (1, 1): 0.1})
    lattices = periodic_ladder(1, 32, 3)
    fit = operator_consistency_order(
        from_pde_upwind(pde, [0.5]), pde, lambda l: GridFunction.sample(l, np.sin), lattices
    )
    assert 0.8 <= fit.slope <= 1.2


def test_operator_consistency_order_constant_is_exact():
    pde = TargetPDE.build(1, a={(1, 1): 1.0})
    lattices = periodic_ladder(1, 32, 3)
    fit = operator_consistency_order(
        from_pde_central(pde), pde, lambda l: GridFunction.constant(l, 1.0), lattices
    )
    assert fit.exact


def test_problem_data_from_fields_and_data_norm():
    lattice = Lattice.periodic(1, 32)
    problem = ProblemData.from_fields(lattice, "sin(x)", 1.0, f=1.0)
    assert problem.source(0.0).values[0] == 1.0
    assert problem.noise(0.0, 0) is None
    # |1|_{l_{h,2}}^2 = 2 pi over [0, 1]
    value = data_norm(problem, 1, [1], np.linspace(0, 1, 5))
    assert value == pytest.approx(math.sqrt(2 * math.pi))


def test_problem_data_rejects_bad_horizon():
    with pytest.raises(ValueError):
        ProblemData.from_fields(Lattice.periodic(1, 8), 0.0, 0.0)


def test_upwind_boundary_example_and_rejection():
    spec = from_pde_upwind(TargetPDE.build(1, a={(0, 1): 0.25}), [0.25])
    assert spec.p_field(1).constant_value == pytest.approx(0.5)
    assert spec.q_field(1).constant_value == pytest.approx(0.0)
    with pytest.raises(AdmissibilityError) as e:
        from_pde_upwind(TargetPDE.build(1, a={(0, 1): 0.5}), [0.25])
    assert e.value.theta == 0.25
    assert e.value.value == pytest.approx(0.5)


def variable_spec_2d() -> StencilSpec:
    return StencilSpec.build(
        2,
        a={
            ((1, 0), (1, 0)): "1 + 0.5*sin(x1)",
            ((1, 0), (0, 1)): "0.2*cos(x2)",
            ((0, 1), (0, 1)): 0.7,
            ((0, 0), (1, 1)): "0.1*sin(x1 + x2)",
        },
        p={(1, 0): "0.3 + 0.1*cos(x1)"},
        q={(0, 1): 0.4},
        b={(1, 0): ["0.5*sin(x2)", 0.1], (1, 1): [0.2, "cos(x1)"]},
        driver_count=2,
    )


def test_apply_L_and_M_are_linear():
    spec = variable_spec_2d()
    lattice = Lattice.periodic(2, 16)
    rng = np.random.default_rng(3)
    for _ in range(10):
        u = GridFunction(lattice, rng.standard_normal(lattice.shape))
        v = GridFunction(lattice, rng.standard_normal(lattice.shape))
        alpha, beta = (float(i) for i in rng.standard_normal(2))
        combined = alpha * u + beta * v
        lu, lv = apply_L(spec, 0.3, u), apply_L(spec, 0.3, v)
        scale = abs(alpha) * sup_norm(lu) + abs(beta) * sup_norm(lv)
        assert sup_norm(apply_L(spec, 0.3, combined) - (alpha * lu + beta * lv)) <= 1e-13 * scale
        for m, mu, mv in zip(apply_M(spec, 0.3, combined), apply_M(spec, 0.3, u), apply_M(spec, 0.3, v)):
            scale = abs(alpha) * sup_norm(mu) + abs(beta) * sup_norm(mv)
            assert sup_norm(m - (alpha * mu + beta * mv)) <= 1e-13 * scale


def test_parabolicity_independent_of_direction_order():
    a = {((1, 0), (1, 0)): 2.0, ((0, 1), (0, 1)): 1.0, ((1, 0), (1, 1)): 0.3, ((1, 1), (1, 1)): 0.5}
    b = {(1, 0): 1.2, (1, 1): 0.4, (0, 1): -0.6}
    orders = [
        [(1, 0), (0, 1), (1, 1)],
        [(1, 1), (1, 0), (0, 1)],
        [(0, 1), (1, 1), (1, 0)],
    ]
    reports = [parabolicity_report(StencilSpec.build(2, i, a=a, b=b)) for i in orders]
    for report in reports[1:]:
        assert report.passed == reports[0].passed
        assert report.min_eigenvalue == pytest.approx(reports[0].min_eigenvalue, abs=1e-14)
        assert report.min_pq == reports[0].min_pq


def test_perturbed_example_is_not_parabolic():
    report = parabolicity_report(StencilSpec.build(1, [0, 1], a={(1, 1): 2.0}, b={1: 2.1}))
    assert not report.passed
    assert report.min_eigenvalue == pytest.approx(-0.205, abs=1e-12)
