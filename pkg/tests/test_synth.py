import numpy as np
import pytest

from kktgp import synth
from kktgp.core import kkt_certificate_check
from kktgp.scenarios import annulus_path_scenario, arm_scenario, discs_scenario
from kktgp.synth import SynthesisError


@pytest.fixture(scope="module")
def annulus():
    return annulus_path_scenario()


def test_wrap_has_contact_force_only_on_the_boundary(annulus):
    cd = synth.geodesic_demo(annulus, 0, 0.5, 0.2, 8, -1, 4, 4)
    X = cd.demo.states
    on = np.abs(annulus.value(X)) <= 1e-9
    lam = cd.multipliers.lambda_unk
    assert np.all(lam[~on] == 0)
    assert np.all(lam[on][1:-1] > 0)
    # tangent legs make every boundary state carry force, junctions included
    assert np.all(lam[on] > 0)


def test_secant_entry_has_zero_force_at_junctions(annulus):
    cd = synth.geodesic_demo(annulus, 0, 0.5, 0.2, 8, 1, 4, 4, entry="secant")
    lam = cd.multipliers.lambda_unk
    assert lam[4] == pytest.approx(0, abs=1e-12) and lam[12] == pytest.approx(0, abs=1e-12)
    assert np.all(lam[5:12] > 0)


def test_unobstructed_pair_is_a_straight_line(annulus):
    cd = synth.straight_demo(annulus, (2.5, -2.5), (2.5, 2.5), 12)
    np.testing.assert_allclose(np.diff(cd.demo.controls, axis=0), 0.0, atol=1e-15)
    np.testing.assert_array_equal(cd.multipliers.lambda_unk, 0.0)
    assert cd.report.passed
    with pytest.raises(SynthesisError):
        synth.straight_demo(annulus, (-2.5, 0.0), (2.5, 0.0), 30)


def test_endpoints_inside_unsafe_set_are_rejected(annulus):
    with pytest.raises(SynthesisError, match="endpoints"):
        synth.synth_numeric_demo(annulus, (1.5, 0.0), (-2.5, 0.0))


def test_geodesic_requires_disc_obstacles():
    with pytest.raises(SynthesisError):
        synth.geodesic_demo(arm_scenario(), 0, 0.0, 0.1, 4)


@pytest.mark.parametrize("make", [annulus_path_scenario, discs_scenario])
@pytest.mark.parametrize("entry", ["tangent", "secant"])
def test_every_geodesic_demo_is_certified(make, entry):
    sc = make()
    for cd in synth.synth_geodesic_demos(sc, 8, seed=11, entry=entry):
        assert kkt_certificate_check(cd.demo, cd.multipliers, 1e-6).passed
        assert np.max(sc.value(cd.demo.states)) <= 1e-9
        assert np.any(cd.multipliers.lambda_unk > 0)


def test_cup_demos_are_certified(cup, cup_certified):
    assert len(cup_certified) == 4
    sides = []
    for cd in cup_certified:
        assert kkt_certificate_check(cd.demo, cd.multipliers, 1e-6).passed
        assert np.max(cup.value(cd.demo.states)) <= 1e-9
        r = np.linalg.norm(cd.demo.states, axis=1)
        sides.append("outer" if r.max() > 2.0 else "inner")
    assert sides == ["outer", "inner", "outer", "inner"]


def test_zero_penalty_gives_the_straight_line():
    sc = arm_scenario()
    a, b = np.array([-2.0, 0.5]), np.array([1.0, -1.0])
    init = np.linspace(a, b, 11)
    init[1:-1] += 0.1
    X = synth.penalty_solve(sc, a, b, 11, weights=(0.0,), init=init)
    np.testing.assert_allclose(X, np.linspace(a, b, 11), atol=1e-6)


def test_numeric_demo_around_a_disc_is_certified():
    sc = discs_scenario()
    cd = synth.synth_numeric_demo(sc, (-3.6, 0.3), (-0.4, -0.2))
    assert cd is not None and cd.report.passed
    assert np.max(sc.value(cd.demo.states)) <= 1e-6
    assert np.any(cd.multipliers.lambda_unk > 0)


@pytest.mark.slow
def test_arm_synthesizer_yield():
    sc = arm_scenario()
    cds = synth.synth_numeric_demos(sc, 50, seed=0)
    assert len(cds) >= 40
    for cd in cds:
        assert np.max(sc.value(cd.demo.states)) <= 1e-6
        assert cd.report.passed
