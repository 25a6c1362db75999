import math

import numpy as np
import pytest

from rescal.errors import DomainError
from rescal.flows import (BUILTIN_FLOWS, builtin, eno_base_profile, evaluate_field, flow_summary,
                          integrate, integrate_many, item4_profile, smoothstep)


def test_builtin_names_and_unknown():
    assert set(BUILTIN_FLOWS) == {"ConstantTorus", "LinearTorus", "TorusItem4", "SphereEno",
                                  "SphereEnoUnperturbed", "CatMapSuspension"}
    with pytest.raises(DomainError):
        builtin("Lorenz")


def test_singular_set_descriptions():
    assert builtin("TorusItem4").singular_set == "{0, 2/3} × [0,4]"
    assert builtin("ConstantTorus").singular_set == "∅"
    s = builtin("SphereEno").singular_set
    assert "(0,0,1)" in s and "(0,0,-1)" in s and "z = -0.3" in s and "z = -0.7" in s


def test_smoothstep_limits_and_derivative():
    u = np.linspace(-0.5, 1.5, 2001)
    s, ds = smoothstep(u)
    assert s[0] == 0 and s[-1] == 1
    assert np.all(np.diff(s) >= 0)
    num = np.gradient(s, u)
    np.testing.assert_allclose(ds[10:-10], num[10:-10], atol=2e-3)


def test_item4_profile_pieces():
    x = np.array([-2.0, -1.5, -0.1, 0.0, 0.2, 2 / 3, 0.7, 1.5])
    v, _ = item4_profile(x)
    np.testing.assert_allclose(v, [1, 1, 0.1, 0, -0.2, 0, 0.7 - 2 / 3, 1], atol=1e-12)
    xs = np.linspace(-2, 2, 40001)
    v, d = item4_profile(xs)
    flips = xs[np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) <= 0)[0]]
    np.testing.assert_allclose([flips.min(), flips.max()], [0.0, 2 / 3], atol=2e-4)
    assert np.all((np.abs(flips) < 2e-4) | (np.abs(flips - 2 / 3) < 2e-4))
    np.testing.assert_allclose(d[5:-5], np.gradient(v, xs)[5:-5], atol=1e-2)


def test_eno_profile_derivative():
    z = np.linspace(-0.99, 0.99, 9901)
    v, d = eno_base_profile(z)
    np.testing.assert_allclose(d[5:-5], np.gradient(v, z)[5:-5], atol=1e-4)


def test_rk4_constant_field_is_exact():
    f = builtin("LinearTorus")
    tr = integrate(f, np.array([-1.0, 0.5]), 3.0, step=0.01, record_every=1.0)
    v = np.array(f.velocity)
    want = f.chart.reduce(np.array([-1.0, 0.5]) + 3.0 * v)
    np.testing.assert_allclose(tr.points[-1], want, atol=1e-10)


def test_rk4_item4_linear_zone_decay():
    # rho = -x near 0 gives x(t) = x0 e^{-t}
    f = builtin("TorusItem4")
    tr = integrate(f, np.array([0.2, 1.0]), 2.0, step=0.01, record_every=0.5)
    np.testing.assert_allclose(tr.points[:, 0], 0.2 * np.exp(-tr.times), rtol=1e-8)
    np.testing.assert_allclose(tr.speeds, 0.2 * np.exp(-tr.times), rtol=1e-8)



def test_item4_speed_ratio_from_circle_tends_to_exp_minus_one():
    f = builtin("TorusItem4")
    tr = integrate(f, np.array([-2.0, 0.5]), 12.0, step=0.01, record_every=1.0)
    ratios = tr.speeds[1:] / tr.speeds[:-1]
    np.testing.assert_allclose(ratios[4:], np.exp(-1.0), rtol=1e-6)

def test_sphere_orbits_stay_on_sphere_and_keep_longitude():
    f = builtin("SphereEno")
    p = f.chart.reduce(np.array([0.6, 0.3, -0.2]))
    tr = integrate(f, p, 5.0, step=0.01, record_every=0.5)
    np.testing.assert_allclose(np.linalg.norm(tr.points, axis=1), 1.0, atol=1e-12)
    lon = np.arctan2(tr.points[:, 1], tr.points[:, 0])
    np.testing.assert_allclose(lon, lon[0], atol=1e-10)


def test_suspension_time_one_is_the_matrix():
    f = builtin("CatMapSuspension")
    p = np.array([0.3, 0.7, 0.25])
    tr = integrate(f, p, 1.0, step=0.05)
    want = np.array([*f.chart.apply(p[:2]), 0.25])
    np.testing.assert_allclose(tr.points[-1], want, atol=1e-9)


def test_equilibria_are_frozen():
    f = builtin("TorusItem4")
    b = integrate_many(f, np.array([[0.0, 1.0], [2 / 3, 2.0]]), 2.0, step=0.01)
    np.testing.assert_allclose(b.points[:, -1], b.points[:, 0])


def test_integrate_validates():
    f = builtin("ConstantTorus")
    with pytest.raises(DomainError):
        integrate_many(f, np.zeros((1, 2)), -1.0)
    with pytest.raises(DomainError):
        integrate(f, np.zeros(2), 0.5, step=1.0)
    with pytest.raises(DomainError):
        evaluate_field(f, builtin("SphereEno").chart.point((0.0, 0.0, 1.0)))


def test_flow_summary_values():
    s = flow_summary(builtin("ConstantTorus"))
    assert (s.sup_speed, s.inf_speed, s.lipschitz) == (1.0, 1.0, 0.0)
    s = flow_summary(builtin("CatMapSuspension"))
    assert s.nonsingular and s.lipschitz == pytest.approx(math.log((3 + math.sqrt(5)) / 2))
    s = flow_summary(builtin("TorusItem4"))
    assert not s.nonsingular and s.lipschitz >= 1.0


def test_flow_summary_is_monotone_in_resolution():
    f = builtin("SphereEno")
    lo, hi = flow_summary(f, 8), flow_summary(f, 16)
    assert hi.sup_speed >= lo.sup_speed and hi.lipschitz >= lo.lipschitz


def test_sphere_gamma_and_kappa():
    f = builtin("SphereEno")
    _, d = f.profile(np.array([f.a]))
    assert f.gamma == pytest.approx(d[0] * (1 - f.a ** 2))
    z = f.parallel_level()
    assert f.a < z < 0
    assert f.kappa(z) > 0
