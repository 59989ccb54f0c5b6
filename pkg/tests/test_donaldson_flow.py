import numpy as np
import pytest

import donaldson_flow
from bundle_fields import build_bundle, i_hatF, random_metric, slope_bundle
from donaldson_flow import (FlowControls, FlowTrajectory, Verdict, concentration_detect,
                            concentration_mask, concentration_regions, flow_diagnostics,
                            initial_state, periodic_label, residual_norm, run, step)
from errors import FlowAbort, NumericalError, PreconditionError
from scenario import load_preset
from torus_geometry import green_solve


def _h_norm_residual(spec, h):
    m = i_hatF(spec, h) - slope_bundle(spec) * np.eye(spec.rank)
    hinv = np.linalg.inv(h)
    dens = np.real(np.trace(m @ hinv @ np.conj(np.swapaxes(m, -1, -2)) @ h, axis1=-2, axis2=-1))
    return float(np.sqrt(np.mean(dens) * spec.geometry.volume))


def test_flat_bundle_is_a_fixed_point(line_geometry):
    spec = build_bundle(line_geometry, (1, 1), (0, 0), "direct_sum")
    traj = run(spec)
    assert traj.verdict == Verdict.CONVERGED
    assert traj.last_state.t == 0.0
    assert np.allclose(traj.last_state.h, np.eye(2))


def test_split_bundle_follows_the_closed_form(split_spec):
    traj = run(split_spec, FlowControls(dt0=0.01, t_max=5.0, stride=50))
    assert traj.verdict == Verdict.TIMEOUT
    state = traj.last_state
    assert state.t == pytest.approx(5.0)
    h = state.h
    assert np.allclose(h[..., 0, 0].real, np.exp(-2 * state.t), rtol=1e-6, atol=0)
    assert np.allclose(h[..., 1, 1].real, np.exp(2 * state.t), rtol=1e-6, atol=0)
    assert np.allclose(np.linalg.det(h).real, 1.0, atol=1e-10)


def test_split_bundle_blows_up(split_spec):
    traj = run(split_spec, FlowControls(dt0=0.01, t_max=20.0, stride=50))
    assert traj.verdict == Verdict.BLOW_UP
    assert traj.last_state.sup_h > 1e6
    assert traj.last_state.t == pytest.approx(np.log(1e6) / 2, abs=0.02)
    assert len(traj.snapshots) >= 3
    assert traj.snapshot_times == sorted(traj.snapshot_times)


def test_line_mode_decays_at_the_stencil_rate(line_geometry):
    g = line_geometry
    spec = build_bundle(g, (1,), (0,), "direct_sum")
    L = g.periods[0]
    eps = 1e-4
    mode = np.cos(2 * np.pi * g.coordinate(0) / L) + 0 * g.coordinate(1)
    h0 = np.exp(eps * mode)[..., None, None].astype(complex)
    traj = run(spec, FlowControls(t_max=0.2, stride=1000), h0=h0)
    t = traj.last_state.t
    u = np.log(traj.last_state.h[..., 0, 0].real)
    amplitude = 2 * np.mean(u * mode)
    kappa = g.fd_wavenumbers(0).ravel()[1]
    assert amplitude == pytest.approx(eps * np.exp(-kappa ** 2 * t / g.vol_scale), rel=1e-3)


def test_line_flow_converges_to_the_poisson_solution(line_geometry):
    g = line_geometry
    spec = build_bundle(g, (1,), (0,), "random_smooth", seed=1, amplitude=0.3, conformal=False)
    traj = run(spec, FlowControls(t_max=10.0, stride=100))
    assert traj.verdict == Verdict.CONVERGED
    assert traj.last_state.residual < 1e-6
    assert _h_norm_residual(spec, traj.last_state.h) < 1e-6
    u = np.log(traj.last_state.h[..., 0, 0].real)
    source = np.real(i_hatF(spec)[..., 0, 0]) - slope_bundle(spec)
    expected, _ = green_solve(g, source - source.mean(), "fd4")
    assert np.max(np.abs(u - u.mean() - expected)) < 2e-2 * np.max(np.abs(expected))

    diagnostics = flow_diagnostics(traj)
    assert diagnostics["monotone"]
    assert len(diagnostics["curvature_l2"]) == len(traj.snapshots)
    assert diagnostics["grad_hatF_l2"][-1] < diagnostics["grad_hatF_l2"][0]


def test_residual_and_dissipation_series_are_recorded(extension_spec):
    traj = run(extension_spec, FlowControls(t_max=0.05, stride=5))
    series = traj.series
    assert len(series["t"]) == len(series["residual"]) >= 2
    assert all(b ** 2 <= a ** 2 + 1e-8 * max(1.0, a ** 2)
               for a, b in zip(series["residual"], series["residual"][1:]))
    assert all(b >= a for a, b in zip(series["dissipation"], series["dissipation"][1:]))
    for trace in series["trace"]:
        assert trace == pytest.approx(2 * np.pi * extension_spec.degree, abs=1e-6)


def test_residual_is_the_h_norm_of_the_curvature_defect(extension_spec):
    traj = run(extension_spec, FlowControls(t_max=0.05, stride=5))
    h = traj.last_state.h
    assert traj.series["residual"][-1] == pytest.approx(_h_norm_residual(extension_spec, h), rel=1e-10)
    h = random_metric(extension_spec, seed=2, amplitude=0.8).h
    assert residual_norm(extension_spec, h) == pytest.approx(_h_norm_residual(extension_spec, h), rel=1e-10)


def test_default_step_uses_the_parabolic_bound(line_geometry):
    dx = line_geometry.spacing(0)
    assert FlowControls().initial_dt(line_geometry) == pytest.approx(0.2 * dx * dx)
    with pytest.raises(PreconditionError):
        FlowControls(dt0=-1.0).initial_dt(line_geometry)


def test_step_rejects_nonpositive_dt(split_spec):
    with pytest.raises(PreconditionError):
        step(initial_state(split_spec), 0.0)


def test_initial_metric_must_be_positive(split_spec):
    h0 = np.broadcast_to(np.diag([1.0, -1.0]), split_spec.geometry.shape + (2, 2))
    with pytest.raises(NumericalError):
        initial_state(split_spec, h0)


def test_repeated_rejection_aborts_with_the_last_state(split_spec, monkeypatch):
    def always_fail(*args, **kwargs):
        raise NumericalError("metric lost positivity", (0, 0))

    monkeypatch.setattr(donaldson_flow, "_rk4", always_fail)
    with pytest.raises(FlowAbort) as err:
        run(split_spec, FlowControls(dt0=0.01, t_max=1.0, max_halvings=3))
    assert err.value.last_state is not None
    assert err.value.last_state.t == 0.0


def test_verdict_is_set_once(split_spec):
    traj = FlowTrajectory(spec=split_spec, controls=FlowControls())
    traj.verdict = Verdict.TIMEOUT
    with pytest.raises(PreconditionError):
        traj.verdict = Verdict.CONVERGED


def test_concentration_region_around_a_point_mass(surface_geometry):
    g = surface_geometry
    density = np.zeros(g.shape)
    density[3, 3, 3, 3] = 100.0 / g.cell_volume
    regions = concentration_regions(g, density, eps_loc=0.5, radius=2 * g.spacing(0))
    assert len(regions) == 1
    assert regions[0]["energy"] == pytest.approx(100.0)
    mask = concentration_mask(g, regions)
    assert mask[3, 3, 3, 3]
    assert mask.sum() == len(regions[0]["cells"])


def test_no_concentration_on_curves_or_flat_data(line_geometry, surface_geometry):
    assert concentration_regions(line_geometry, np.ones(line_geometry.shape), 0.5, 1.0) == []
    assert concentration_regions(surface_geometry, np.zeros(surface_geometry.shape), 0.5, 1.0) == []


def test_concentration_detect_on_a_smooth_surface_run(surface_geometry):
    spec = build_bundle(surface_geometry, (1, 1), (1, -1), "direct_sum")
    traj = run(spec, FlowControls(dt0=0.01, t_max=0.05, stride=1))
    assert concentration_detect(traj, eps_loc=50.0) == []


def test_region_across_the_seam_is_one_region(surface_geometry):
    g = surface_geometry
    density = np.zeros(g.shape)
    density[3, 3, 3, 3] = 100.0 / g.cell_volume
    inside = concentration_regions(g, density, eps_loc=0.5, radius=2 * g.spacing(0))
    density = np.zeros(g.shape)
    density[0, 0, 0, 0] = 100.0 / g.cell_volume
    regions = concentration_regions(g, density, eps_loc=0.5, radius=2 * g.spacing(0))
    assert len(regions) == 1
    assert len(regions[0]["cells"]) == len(inside[0]["cells"])
    assert regions[0]["energy"] == pytest.approx(100.0)


def test_periodic_label_joins_opposite_faces():
    mask = np.zeros((8, 8), dtype=bool)
    mask[0, 0] = mask[0, 7] = mask[7, 0] = mask[7, 7] = True
    mask[3:5, 3:5] = True
    labels, count = periodic_label(mask)
    assert count == 2
    assert len({labels[0, 0], labels[0, 7], labels[7, 0], labels[7, 7]}) == 1
    assert labels[3, 3] != labels[0, 0]
    assert labels[1, 1] == 0
    assert periodic_label(np.zeros((4, 4), dtype=bool))[1] == 0


@pytest.mark.slow
def test_stable_extension_converges_with_a_monotone_h_norm_residual():
    scenario = load_preset("stable_extension_r2")
    spec = scenario.bundle()
    traj = run(spec, scenario.flow_controls())
    assert traj.verdict == Verdict.CONVERGED
    assert _h_norm_residual(spec, traj.last_state.h) < 1e-6
    res = traj.series["residual"]
    assert all(b ** 2 <= a ** 2 + 1e-8 * max(1.0, a ** 2) for a, b in zip(res, res[1:]))
    assert flow_diagnostics(traj)["monotone"]


def test_trajectory_hands_out_plain_metric_arrays(split_spec):
    traj = run(split_spec, FlowControls(dt0=0.01, t_max=0.05, stride=2))
    assert traj.verdict == Verdict.TIMEOUT
    shape = split_spec.geometry.shape + (2, 2)
    assert all(isinstance(h, np.ndarray) and h.shape == shape for h in traj.snapshots)
    assert np.allclose(traj.snapshots[-1], traj.last_state.h)
    assert not hasattr(traj, "metrics") and not hasattr(traj.last_state, "metric")
