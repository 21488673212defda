import math

import numpy as np
import pytest
from scipy import special

from chaostracer.diagrams import (Diagram, MomentSpec, connected_components, count_complete_formula,
                                  cycle_census, cycle_constant_C, cycle_order,
                                  enumerate_complete, eval_IG_cycle, galerkin_cycle, iter_complete,
                                  moment_Z, nested_cycle_nodes, validate_product_formula)
from chaostracer.spectrum_core import ParameterError, SpectrumParams

P = SpectrumParams()
H = 2.0 / 3.0
ONE = MomentSpec(((1.0, 1.0),), 4)


def test_counts_match_inclusion_exclusion():
    for n in range(1, 7):
        assert len(enumerate_complete(n)) == count_complete_formula(n)
    assert sum(1 for _ in iter_complete(7)) == count_complete_formula(7) == 79008


def test_single_hand_diagrams_are_pairings():
    # r = 1: perfect matchings of n nodes, (n-1)!!
    assert [len(enumerate_complete(n, r=1)) for n in (2, 4, 6)] == [1, 3, 15]
    assert len(enumerate_complete(3, r=1)) == 0


def test_cycle_census():
    assert cycle_census(3) == {(3,): 8}
    assert cycle_census(4) == {(2, 2): 12, (4,): 48}
    # every complete diagram of 2-hand nodes splits into cycles
    c6 = cycle_census(6)
    assert sum(c6.values()) == 6040


def test_components_and_cycle_order():
    g = next(iter_complete(4))
    comps = connected_components(g)
    assert sorted(sum(map(list, comps), [])) == [0, 1, 2, 3]
    for comp in comps:
        order = cycle_order(g, comp)
        assert sorted(order) == sorted(comp)


def test_diagram_validation():
    with pytest.raises(ValueError):
        Diagram(2, 2, frozenset({((0, 0), (0, 1))}), frozenset({(1, 0), (1, 1)}))
    with pytest.raises(ValueError):
        Diagram(2, 2, frozenset({((0, 0), (1, 0))}))
    g = Diagram(2, 2, frozenset({((0, 0), (1, 0))}), frozenset({(0, 1), (1, 1)}))
    assert not g.complete
    with pytest.raises(ValueError):
        connected_components(g)


def test_cycle_constant_closed_form():
    # a0 r0^{H-1} S_1 2^{(1-alpha)/(2beta)} Gamma((1-alpha)/(2beta)) / (2beta)
    e = 0.5 / 1.5
    expect = 2 * math.pi * 2 ** e * special.gamma(e) / 1.5
    assert cycle_constant_C(P) == pytest.approx(expect, rel=1e-13)
    with pytest.raises(ParameterError):
        cycle_constant_C(SpectrumParams(alpha=0.5, beta=0.25))


def test_two_cycle_exact():
    # int_0^1 int_0^1 |s-t|^{2H-2} = 2 / ((2H-1) 2H)
    exact = 2.0 / ((2 * H - 1) * 2 * H)
    r = eval_IG_cycle(2, ONE, H, 16)
    assert abs(r.value - exact) < max(3 * r.error, 1e-3 * exact)
    assert r.method == "nested"


def test_three_and_four_cycles_nested_vs_galerkin():
    # nested rule and Galerkin trace are independent discretizations
    nested3 = eval_IG_cycle(3, ONE, H, 16, method="nested")
    gal3 = eval_IG_cycle(3, ONE, H, 16, method="galerkin")
    assert nested3.value == pytest.approx(6.16036893772564, rel=1e-9)  # frozen
    assert gal3.value == pytest.approx(nested3.value, rel=2e-3)
    nested4 = eval_IG_cycle(4, ONE, H, 8, method="nested")
    gal4 = eval_IG_cycle(4, ONE, H, 8, method="galerkin")
    assert gal4.value == pytest.approx(nested4.value, rel=3e-3)


def test_galerkin_two_cycle_converges():
    exact = 2.0 / ((2 * H - 1) * 2 * H)
    errs = [abs(galerkin_cycle([((1.0, 1.0),)] * 2, H, n) - exact) for n in (64, 512)]
    assert errs[1] < errs[0]


def test_nested_nodes_integrate_moments():
    # weights carry the kernel; by the symmetry s -> 1-s, int s K = I2 / 2
    pts, w = nested_cycle_nodes([((1.0, 1.0),)] * 2, H, 16)
    exact = 2.0 / ((2 * H - 1) * 2 * H)
    assert pts.shape == (w.size, 2)
    assert np.sum(w) == pytest.approx(exact, rel=1e-3)
    assert np.sum(w * pts[:, 0]) == pytest.approx(exact / 2, rel=1e-3)


def test_cycle_argument_validation():
    with pytest.raises(ParameterError):
        eval_IG_cycle(1, ONE, H)
    with pytest.raises(ParameterError):
        eval_IG_cycle(2, ONE, 0.4)


def test_moment_Z_second_moment_closed_form():
    C = cycle_constant_C(P)
    exact = 2 * C * C / (H * (2 * H - 1))
    m = moment_Z(MomentSpec(((1.0, 1.0),), 2), 2, P, 16)
    assert abs(m.value - exact) < max(3 * m.error, 2e-3 * exact)
    assert moment_Z(MomentSpec(((1.0, 1.0),), 1), 1, P).value == 0.0


def test_moment_Z_third_moment_frozen():
    m = moment_Z(MomentSpec(((1.0, 1.0),), 3), 3, P, 16)
    assert m.value == pytest.approx(139277.44169007425, rel=1e-9)  # frozen
    # 8 single three-cycles: E Z^3 = 8 C^3 I3
    I3 = eval_IG_cycle(3, ONE, H, 16).value
    assert m.value == pytest.approx(8 * cycle_constant_C(P) ** 3 * I3, rel=1e-12)


def test_moment_Z_self_similarity():
    # E Z(t)^2 = t^{2H} E Z(1)^2
    m1 = moment_Z(MomentSpec(((1.0, 1.0),), 2), 2, P, 16).value
    m2 = moment_Z(MomentSpec(((1.0, 2.0),), 2), 2, P, 16).value
    assert m2 / m1 == pytest.approx(2 ** (2 * H), rel=2e-3)


@pytest.mark.parametrize("n,r", [(1, 2), (2, 2), (3, 2), (2, 1), (4, 1)])
def test_product_formula(n, r):
    res = validate_product_formula(n, grid_cells=6, seed=1, r=r, n_samples=50_000)
    assert res["passed"]


def test_product_formula_limits():
    with pytest.raises(ParameterError):
        validate_product_formula(4)
    with pytest.raises(ParameterError):
        validate_product_formula(2, grid_cells=9)
