import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geotension.datagen import build_dataset
from geotension.geometry import ClosedPolygon, Geometry
from geotension.metrics import g1_proxy
from geotension.predictor import PredictorConfig, init_params
from geotension.experiments import (
    ABLATIONS,
    METHODS,
    MU_GRID,
    ROBUSTNESS_SIGMAS,
    Predictor,
    ablation_configs,
    angle_decay,
    evaluate_method,
    is_convex,
    iss_evaluate,
    iss_track,
    mu_effective,
    mu_effective_from_angles,
    oracle_grid_search,
    perturb,
    proximity_diagnostic,
    read_rows,
    refine,
    robustness_study,
    single_tension_check,
    tension_profiles,
)
from geotension.subdivision import ALPHA_MAX, ALPHA_MIN, SchemeConfig, classical_angles
from geotension.training import ConfigurationError, TrainConfig

from conftest import star_polygon

TINY = PredictorConfig(width=16, embed_dim=4, head_hidden=8)


@pytest.fixture(scope="module")
def small():
    return build_dataset(seed=4, per_geometry=5)


def regular(n):
    t = 2 * np.pi * np.arange(n) / n
    return ClosedPolygon("E2", np.stack([np.cos(t), np.sin(t)], 1))


def test_method_table():
    assert METHODS["4pt"].mu == 0.0 and METHODS["6pt"].mu == -0.25
    assert len(MU_GRID) == 21 and MU_GRID[0] == -0.5 and MU_GRID[-1] == pytest.approx(0.05)


def test_refine_dispatch(small):
    s = small.samples[0]
    assert len(refine(s.polygon, METHODS["4pt"], 2).vertices) == 48
    assert len(refine(s.polygon, SchemeConfig("lah", mu=-0.1), 2).vertices) == 48
    assert len(refine(s.polygon, METHODS["logexp6"], 1).vertices) == 24
    with pytest.raises(ConfigurationError):
        refine(s.polygon, SchemeConfig("neural"), 2)
    pred = Predictor(init_params(TINY), TINY)
    assert len(refine(s.polygon, SchemeConfig("neural"), 3, pred).vertices) == 96


def test_eval_run_io(small, tmp_path):
    run = evaluate_method(METHODS["4pt"], small.val, k=3, method="4pt")
    agg = run.aggregate()
    assert set(agg) == {"E2", "S2", "H2"}
    e2 = [r.g1 for r in run.rows if r.geometry == "E2"]
    assert agg["E2"]["g1"]["std"] == pytest.approx(np.std(e2))
    csv_path, json_path = run.write(tmp_path)
    back = read_rows(csv_path)
    assert len(back) == len(run.rows)
    # repr keeps floats exact
    assert float(back[0]["mean_nn"]) == run.rows[0].mean_nn
    assert json.loads(json_path.read_text())["method"] == "4pt"
    par = evaluate_method(METHODS["4pt"], small.val, k=3, method="4pt", jobs=2)
    assert [r.row() for r in par.rows] == [r.row() for r in run.rows]


def test_oracle_grid(small):
    res = oracle_grid_search(small.val, "S2", k=3, grid=MU_GRID[::5])
    assert len(res.table) == 5
    assert res.mu_star in [m for m, _ in res.table]
    assert res.best_mean_nn <= res.value_at(-0.5)
    plain = evaluate_method(METHODS["4pt"], [s for s in small.val if s.geometry is Geometry.SPHERICAL], k=3)
    assert res.baseline == pytest.approx(np.mean([r.mean_nn for r in plain.rows]))
    assert res.improvement == pytest.approx((res.baseline - res.best_mean_nn) / res.baseline)
    with pytest.raises(ConfigurationError):
        oracle_grid_search([s for s in small.val if s.geometry is Geometry.EUCLIDEAN], "H2", k=1)


@given(st.integers(0, 2**32 - 1), st.sampled_from([-0.5, -0.25, 0.0]))
def test_effective_tension_round_trip(seed, mu):
    rng = np.random.default_rng(seed)
    P = ClosedPolygon("E2", star_polygon("E2", 12, rng))
    d = P.exterior_angles()
    a = classical_angles(d, mu)
    prof = mu_effective(P, a)
    ok = np.isfinite(prof.values) & (a > ALPHA_MIN) & (a < ALPHA_MAX)
    np.testing.assert_allclose(prof.values[ok], mu, atol=1e-9)


def test_effective_tension_undefined_on_regular_polygon():
    P = regular(8)
    prof = mu_effective(P, np.zeros(8))
    assert prof.stats()["n_undefined"] == 8 and np.isnan(prof.stats()["mean"])
    with pytest.raises(ValueError):
        mu_effective(P, np.zeros(3))
    # values are clamped to the reporting range
    assert mu_effective_from_angles(np.array([0.0, 1e-3, 0.0, 0.0]), np.full(4, 0.7)).defined.max() <= 1.5


def test_tension_profiles_of_untrained_network(small):
    prof = tension_profiles(small.val, Predictor(init_params(TINY), TINY), per_geometry=2)
    assert set(prof) == {"E2", "S2", "H2"}
    assert all(p.values.size > 0 for p in prof.values())


def test_single_tension_check():
    r = single_tension_check({"E2": -0.1, "S2": -0.8, "H2": 0.3})
    assert r.spread == pytest.approx(1.1) and r.spread_exceeds_interval and not r.single_mu_possible
    r = single_tension_check({"E2": -0.2, "S2": -0.2, "H2": -0.2})
    assert r.single_mu_possible and not r.spread_exceeds_interval


def test_perturb():
    P = regular(6)
    z = np.ones((6, 2))
    np.testing.assert_array_equal(perturb(P, 0.0, z).vertices, P.vertices)
    np.testing.assert_allclose(perturb(P, 0.1, z).vertices - P.vertices, 0.1 * 1.0)
    sphere = ClosedPolygon("S2", np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1.0], [-0.6, -0.8, 0]]))
    with pytest.raises(ValueError):
        perturb(sphere, 0.1, np.ones((4, 3)))


def test_robustness_at_zero_noise_matches_plain_evaluation(small):
    rows = robustness_study(small.val, {"4pt": METHODS["4pt"]}, sigmas=(0.0, 0.1), k=2)
    e2 = [s for s in small.val if s.geometry is Geometry.EUCLIDEAN]
    want = np.mean([g1_proxy(refine(s.polygon, METHODS["4pt"], 2).vertices, "E2") for s in e2])
    assert rows[0].sigma == 0.0 and rows[0].g1_mean == pytest.approx(want)
    assert rows[0].n == len(e2) and rows[1].sigma == 0.1
    assert ROBUSTNESS_SIGMAS == (0.0, 0.03, 0.06, 0.10, 0.15, 0.20)


def test_angle_decay_on_circle():
    # the mirrored rule keeps a regular polygon regular, so max|delta| halves exactly
    rep = angle_decay(regular(12), 0.0, levels=4, orientation=-1)
    assert rep.rate == pytest.approx(1.0, abs=1e-9)
    assert len(rep.max_angles) == 5
    assert rep.mesh_widths[1] < rep.mesh_widths[0]


def test_is_convex():
    assert is_convex(regular(7))
    star = ClosedPolygon("E2", np.array([[0, 0], [2, 0], [1, 0.3], [1, 2.0]]))
    assert not is_convex(star)


def test_proximity_report(small):
    rep = proximity_diagnostic(Predictor(init_params(TINY), TINY), small.val[:3], levels=3)
    assert len(rep.mesh_width) == 3 and len(rep.angle_ratios) == 2
    assert rep.mesh_width[0] > rep.mesh_width[1] > rep.mesh_width[2]
    assert np.isfinite(rep.slope_deviation_vs_h)


def test_ablation_configs():
    p, t = PredictorConfig(), TrainConfig()
    assert ablation_configs("OneHot", p, t)[0].geometry_mode == "onehot"
    assert ablation_configs("NoGeom", p, t)[0].geometry_mode == "none"
    assert ablation_configs("NoEquiv", p, t)[1].lambda_e == 0.0
    assert ablation_configs("NoBending", p, t)[1].lambda_b == 0.0
    assert set(ablation_configs("NoSmooth", p, t)[1].lambda_s.values()) == {0.0}
    assert ablation_configs("LearnedEmbed", p, t) == (p, t)
    assert len(ABLATIONS) == 6
    with pytest.raises(ConfigurationError):
        ablation_configs("NoLoss", p, t)


def test_iss_track():
    tr = iss_track()
    assert len(tr.ground_truth) == 520 and len(tr.control.vertices) == 16
    assert tr.n_closure == 33 and tr.n_orbit == 487
    lat = tr.latlon_deg()[:, 0]
    assert lat.max() == pytest.approx(51.64, abs=0.01) and lat.min() == pytest.approx(-51.64, abs=0.01)
    assert tr.gap_deg == pytest.approx(23.23, abs=0.01)
    np.testing.assert_allclose(np.linalg.norm(tr.ground_truth, axis=1), 1.0, atol=1e-12)


def test_iss_evaluate():
    _, reports, outputs = iss_evaluate({"4pt": METHODS["4pt"]}, k=2)
    assert outputs["4pt"].shape == (64, 3)
    assert reports["4pt"].geometry == "S2"
