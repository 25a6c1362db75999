import math

import numpy as np
import pytest

from rescal.errors import DomainError, SamplingError, UnsupportedError
from rescal.flows import builtin
from rescal.lemmas import (Identity, LemmaReport, SphereRotation, TorusAxisSwapIfSymmetric,
                           TorusTranslation, check_ball_inclusion, check_cone_bound,
                           conjugacy_smoke, probe_r0, pushforward)


def test_report_ids():
    with pytest.raises(DomainError):
        LemmaReport("Nope", 1, 0)
    assert LemmaReport("Cope", 3, 0).passed


def test_probe_r0_constant_speed_takes_top_rung():
    r = probe_r0(builtin("ConstantTorus"), 500)
    assert r == 1.0 and not r.flagged


def test_probe_r0_item4_below_half():
    # near x = 0 the speed is |x|, and |x'| in [|x|/2, 2|x|] needs r <= 1/2
    r = probe_r0(builtin("TorusItem4"), 10_000)
    assert 0 < r <= 0.5 and not r.flagged


def test_probe_r0_is_deterministic():
    f = builtin("SphereEno")
    assert float(probe_r0(f, 2000, seed=3)) == float(probe_r0(f, 2000, seed=3))


def test_ball_inclusion_constant_torus():
    f = builtin("ConstantTorus")
    rep = check_ball_inclusion(f, np.array([0.0, 1.0]), 3.0, 0.2, 500)
    assert rep.violations == 0
    # unit speed: d* = d, and two points of B(x, eps/4) are within eps/2
    assert rep.worst_margin >= 0.5 * 0.2 - 1e-9


def test_ball_inclusion_item4_on_circle():
    f = builtin("TorusItem4")
    rep = check_ball_inclusion(f, np.array([-2.0, 1.0]), 3.0, 0.03, 1000)
    assert rep.violations == 0 and rep.samples == 1000


def test_ball_inclusion_needs_regular_point():
    f = builtin("TorusItem4")
    with pytest.raises(SamplingError):
        check_ball_inclusion(f, np.array([0.0, 1.0]), 1.0, 0.01, 10)
    with pytest.raises(DomainError):
        check_ball_inclusion(f, np.array([-2.0, 1.0]), 1.0, 0.2, 10, r0=0.1)


def test_cone_bound_with_zero_lipschitz():
    rep = check_cone_bound(builtin("LinearTorus"), 20, 3.0)
    assert rep.violations == 0 and rep.parameters["L"] == 0.0


def test_cone_bound_item4_from_circle():
    f = builtin("TorusItem4")
    bases = np.column_stack([np.full(20, -2.0), np.linspace(0, 4, 20, endpoint=False)])
    rep = check_cone_bound(f, 20, 6.0, bases=bases)
    assert rep.violations == 0


def test_cone_bound_detects_a_too_small_constant():
    f = builtin("TorusItem4")
    rep = check_cone_bound(f, 50, 4.0, L=0.1, inflate=1.0)
    assert rep.violations > 0


def test_cone_bound_sphere_upper_rate():
    f = builtin("SphereEno")
    z = f.parallel_level()
    r = math.sqrt(1 - z * z)
    bases = np.array([[r, 0.0, z]])
    rep = check_cone_bound(f, 1, 3.0, bases=bases)
    assert rep.violations == 0


def test_pushforward_support():
    assert pushforward(builtin("TorusItem4"), TorusTranslation((0.0, 1.0))) == builtin("TorusItem4")
    swapped = pushforward(builtin("ConstantTorus"), TorusAxisSwapIfSymmetric())
    assert swapped.velocity == (0.0, 1.0)
    with pytest.raises(UnsupportedError):
        pushforward(builtin("TorusItem4"), TorusTranslation((0.5, 0.0)))
    with pytest.raises(UnsupportedError):
        pushforward(builtin("SphereEno"), SphereRotation((1.0, 0.0, 0.0), 0.3))
    with pytest.raises(UnsupportedError):
        pushforward(builtin("CatMapSuspension"), TorusTranslation((0.0, 1.0)))


@pytest.mark.parametrize("name,iso", [
    ("TorusItem4", TorusTranslation((0.0, 1.0))),
    ("SphereEno", SphereRotation((0.0, 0.0, 1.0), 0.7)),
    ("ConstantTorus", TorusAxisSwapIfSymmetric()),
    ("CatMapSuspension", Identity()),
])
def test_conjugacy_counts_match(name, iso):
    rep = conjugacy_smoke(builtin(name), iso, resolution=8, compare_entropy=False)
    assert rep.violations == 0 and rep.parameters["cells"] == 6
