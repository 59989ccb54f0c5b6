import numpy as np
import pytest

from bundle_fields import MetricField, build_bundle, hermitian_function, random_metric, random_twisted_field
from destabilizer import (ProjectionField, destabilize_verdict, harnack_check, limit_endo,
                          multiplier_membership, normalize_blowup, projection_pi, sigma_power,
                          slope_subsheaf, slope_terms, uy_inequality_check, uy_inequality_terms,
                          uy_ratio)
from donaldson_flow import FlowControls, FlowTrajectory, Verdict, run
from errors import (NoLimitError, NumericalError, PreconditionError, RankPlateauError,
                    UndefinedSlopeError)
from scenario import load_preset
from torus_geometry import TorusGeometry


def _split_run(degrees):
    spec = build_bundle(TorusGeometry(1, 16), (1, 1), degrees, "direct_sum")
    return run(spec, FlowControls(dt0=0.01, t_max=20.0, stride=50))


@pytest.fixture(scope="module")
def split_run():
    return _split_run((1, -1))


def _blank(shape):
    return np.zeros(shape, dtype=bool)


def test_normalize_blowup_has_unit_sup():
    h = np.broadcast_to(np.diag([2.0, 8.0]), (16, 16, 2, 2))
    assert np.allclose(normalize_blowup(h)[0, 0], np.diag([0.25, 1.0]))


def test_sigma_power_of_a_diagonal_field():
    h = np.broadcast_to(np.diag([4.0, 9.0]), (4, 4, 2, 2))
    assert np.allclose(sigma_power(h, 0.5), np.diag([2.0, 3.0]))
    with pytest.raises(PreconditionError):
        sigma_power(h, 0.0)
    with pytest.raises(NumericalError):
        sigma_power(np.broadcast_to(np.diag([1.0, -1.0]), (4, 4, 2, 2)), 0.5)


def test_limit_of_the_split_run_is_diag_0_1(split_run):
    limit = limit_endo(split_run)
    assert limit.gaps[-1] < 1e-3
    assert np.allclose(limit.h_inf, np.diag([0.0, 1.0]), atol=1e-3)


def test_limit_needs_a_blowup_run(line_geometry):
    spec = build_bundle(line_geometry, (1, 1), (0, 0), "direct_sum")
    with pytest.raises(PreconditionError):
        limit_endo(run(spec))


def test_oscillating_snapshots_have_no_limit(split_spec):
    a = MetricField.identity(split_spec).h
    b = a.copy()
    b[..., 0, 0] = 0.1
    traj = FlowTrajectory(spec=split_spec, controls=FlowControls(),
                          snapshot_times=[0.0, 1.0, 2.0, 3.0], snapshots=[a, b, a, b])
    traj.verdict = Verdict.BLOW_UP
    with pytest.raises(NoLimitError) as err:
        limit_endo(traj)
    assert len(err.value.gaps) == 3


def _blowup_trajectory(spec, snapshots):
    traj = FlowTrajectory(spec=spec, controls=FlowControls(),
                          snapshot_times=[float(t) for t in range(len(snapshots))], snapshots=snapshots)
    traj.verdict = Verdict.BLOW_UP
    return traj


def test_a_bump_inside_the_gap_tail_blocks_the_limit(split_spec):
    d = [1.0, 0.5, 0.3, 0.2, 0.15, 0.1499, 0.1399, 0.1394, 0.139, 0.1387]
    eye = MetricField.identity(split_spec).h
    snapshots = []
    for value in d:
        h = eye.copy()
        h[..., 0, 0] = value
        snapshots.append(h)
    with pytest.raises(NoLimitError) as err:
        limit_endo(_blowup_trajectory(split_spec, snapshots))
    gaps = err.value.gaps
    assert gaps[-3] > gaps[-2] > gaps[-1]
    assert gaps[-1] < 1e-3

    smooth = [1.0 / 4 ** k for k in range(10)]
    for h, value in zip(snapshots, smooth):
        h[..., 0, 0] = value
    assert limit_endo(_blowup_trajectory(split_spec, snapshots)).gaps[-1] < 1e-3


def test_projection_of_a_constant_limit():
    h_inf = np.broadcast_to(np.diag([0.0, 1.0]), (16, 16, 2, 2))
    proj = projection_pi(h_inf)
    assert proj.k == 1
    assert proj.histogram == {1: 256}
    assert np.allclose(proj.pi, np.diag([1.0, 0.0]))
    assert proj.sigma_limit_gap < 1e-12
    assert not proj.exceptional.any()


def test_projection_marks_exceptional_cells():
    h_inf = np.broadcast_to(np.diag([0.0, 1.0]), (16, 16, 2, 2)).copy()
    h_inf[2, 7] = np.eye(2)
    proj = projection_pi(h_inf)
    assert proj.k == 1
    assert proj.exceptional[2, 7]
    assert proj.exceptional.sum() == 1
    assert not proj.valid[2, 7]


def test_projection_without_a_plateau_fails():
    h_inf = np.zeros((16, 16, 2, 2))
    flat = h_inf.reshape(-1, 2, 2)
    flat[:100] = np.eye(2)
    flat[100:180] = np.diag([0.0, 1.0])
    with pytest.raises(RankPlateauError) as err:
        projection_pi(h_inf)
    assert err.value.histogram == {0: 100, 1: 80, 2: 76}


def test_projection_sigma_schedule_needs_two_values():
    with pytest.raises(PreconditionError):
        projection_pi(np.broadcast_to(np.eye(2), (16, 16, 2, 2)), schedule=(0.5,))


def test_membership_tests_agree_on_the_split_run(split_run):
    h_inf = limit_endo(split_run).h_inf
    inside = multiplier_membership(split_run.spec, np.array([1.0, 0.0]), split_run.snapshots, h_inf)
    outside = multiplier_membership(split_run.spec, np.array([0.0, 1.0]), split_run.snapshots, h_inf)
    assert inside["by_integral"] and inside["by_kernel"] and inside["agree"]
    assert not outside["by_integral"] and not outside["by_kernel"] and outside["agree"]


def test_membership_needs_three_snapshots(split_spec):
    h = MetricField.identity(split_spec).h
    with pytest.raises(PreconditionError):
        multiplier_membership(split_spec, np.array([1.0, 0.0]), [h, h], h)


@pytest.mark.parametrize("degrees, mu_e, mu_f", [((1, -1), 0.0, 1.0), ((2, 0), 1.0, 2.0)])
def test_split_bundles_are_destabilized_by_the_heavier_line(degrees, mu_e, mu_f):
    report = destabilize_verdict(_split_run(degrees))
    assert report["k"] == 1
    assert report["slope_bundle"] == pytest.approx(mu_e, abs=1e-10)
    assert report["slope_subsheaf"] == pytest.approx(mu_f, abs=1e-3)
    assert report["destabilizing"]
    assert report["shifted_inequality"]
    assert report["exceptional_cells"] == 0


def test_destabilizer_rejects_converged_runs(line_geometry):
    spec = build_bundle(line_geometry, (1, 1), (0, 0), "direct_sum")
    with pytest.raises(PreconditionError):
        destabilize_verdict(run(spec))


def test_rotating_subbundle_pays_for_its_second_fundamental_form(line_geometry):
    g = line_geometry
    spec = build_bundle(g, (1, 1), (0, 0), "direct_sum")
    theta = 2 * np.pi * g.coordinate(0) / g.periods[0] + 0 * g.coordinate(1)
    v = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    pi = v[..., :, None] * v[..., None, :]
    proj = ProjectionField(pi=pi.astype(complex), k=1, tau=1e-6, exceptional=_blank(g.shape),
                           mask=_blank(g.shape), histogram={1: 256})
    terms = slope_terms(proj, spec)
    assert terms["curvature_term"] == pytest.approx(0.0, abs=1e-12)
    assert terms["second_fundamental_form"] > 0
    assert slope_subsheaf(proj, spec) == pytest.approx(-terms["second_fundamental_form"] / (2 * np.pi))


def test_rank_zero_slope_is_undefined(split_spec):
    shape = split_spec.geometry.shape
    proj = ProjectionField(pi=np.zeros(shape + (2, 2)), k=0, tau=1e-6, exceptional=_blank(shape),
                           mask=_blank(shape), histogram={0: 256})
    with pytest.raises(UndefinedSlopeError):
        slope_subsheaf(proj, split_spec)


def test_harnack_bound_holds_along_the_split_run(split_run):
    for h in split_run.snapshots:
        result = harnack_check(h, split_run.spec)
        assert result["holds"]
        assert result["A"] > 0
        assert 0 < result["bound"] <= result["c"] <= 1.0 + 1e-12


def test_harnack_constant_for_the_identity(split_spec):
    result = harnack_check(MetricField.identity(split_spec), split_spec)
    assert result["c"] == pytest.approx(1.0)
    assert result["pointwise_margin"] >= 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_uy_inequality_on_random_fields(seed):
    spec = build_bundle(TorusGeometry(1, 16), (1, 1), (0, 1), "direct_sum", conformal=False)
    h = random_metric(spec, seed, amplitude=0.8)
    for sigma in (0.1, 0.5, 0.9):
        lhs, rhs = uy_inequality_terms(spec, h, sigma)
        assert uy_inequality_check(spec, h, sigma) <= 1e-8 * np.max(rhs)
    lhs, rhs = uy_inequality_terms(spec, h, 1.0)
    assert np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12 * np.max(rhs))


def test_uy_sigma_range(split_spec):
    h = MetricField.identity(split_spec)
    for sigma in (0.0, 1.5):
        with pytest.raises(PreconditionError):
            uy_inequality_terms(split_spec, h, sigma)


def test_uy_ratio_of_a_commuting_family_is_sigma(line_geometry):
    spec = build_bundle(line_geometry, (1, 1), (0, 0), "direct_sum", conformal=False)
    u = np.real(random_twisted_field(line_geometry, 0, np.random.default_rng(3)))
    X = np.array([[1.0, 0.3 + 0.2j], [0.3 - 0.2j, -0.5]])
    h = hermitian_function(u[..., None, None] * X, np.exp)
    for sigma in (0.3, 0.7):
        assert uy_ratio(spec, h, sigma) == pytest.approx(sigma, rel=1e-8)


def test_sigma_limit_agrees_for_a_well_separated_spectrum():
    h_inf = np.broadcast_to(np.diag([1e-9, 1.0]), (16, 16, 2, 2))
    proj = projection_pi(h_inf)
    assert proj.k == 1
    assert proj.sigma_limit_gap < 1e-6
    assert proj.sigma_window == 1.0


def test_sigma_limit_sees_the_small_eigenvalues():
    h_inf = np.broadcast_to(np.diag([5e-7, 0.5]), (16, 16, 2, 2))
    proj = projection_pi(h_inf)
    assert proj.k == 1
    assert np.allclose(proj.pi, np.diag([1.0, 0.0]))
    assert proj.sigma_limit_gap > 1e-2
    assert len(proj.schedule_gaps) == 21


def test_destabilizer_needs_a_proper_subsheaf_rank(split_spec):
    eye = MetricField.identity(split_spec).h
    growing = _blowup_trajectory(split_spec, [c * eye for c in (1.0, 2.0, 4.0, 8.0)])
    with pytest.raises(PreconditionError):
        destabilize_verdict(growing)

    bump = np.zeros(split_spec.geometry.shape)
    bump[0, 0] = 1.0
    snapshots = [eye * (1.0 + c * bump)[..., None, None] for c in (1e7, 1e8, 1e9, 1e10)]
    with pytest.raises(PreconditionError):
        destabilize_verdict(_blowup_trajectory(split_spec, snapshots))


@pytest.mark.slow
def test_unstable_extension_is_destabilized_by_the_first_line():
    scenario = load_preset("unstable_extension_r2")
    traj = run(scenario.bundle(), scenario.flow_controls())
    assert traj.verdict == Verdict.BLOW_UP
    report = destabilize_verdict(traj)
    assert report["k"] == 1
    assert report["slope_bundle"] == pytest.approx(0.5, abs=1e-10)
    assert report["slope_subsheaf"] == pytest.approx(1.0, abs=1e-3)
    assert report["destabilizing"]
    proj = report["projection"]
    assert np.allclose(proj.pi[proj.valid], np.diag([1.0, 0.0]), atol=1e-3)
