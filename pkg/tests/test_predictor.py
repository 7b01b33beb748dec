import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from geotension.features import extract_features
from geotension.geometry import ALL_GEOMETRIES, ClosedPolygon
from geotension.predictor import (
    CheckpointError,
    PredictorConfig,
    check_params,
    dropout_masks,
    flatten_params,
    forward,
    forward_logit,
    init_params,
    linear_layers,
    lipschitz_estimate,
    load_checkpoint,
    param_count,
    param_manifest,
    save_checkpoint,
    spectral_norm,
    subdivide_neural,
    unflatten_params,
)
from geotension.subdivision import ALPHA_MAX, ALPHA_MIN, WARMUP_MU, subdivide_classical

from conftest import star_polygon

seeds = st.integers(0, 2**32 - 1)
SMALL = PredictorConfig(width=16, embed_dim=4, head_hidden=8)


def random_features(n, rng, scale=1.0):
    F = scale * rng.normal(size=(n, 7))
    F[:, 6] = rng.integers(-1, 2, n)
    return F


@pytest.mark.parametrize("mode,count", [("learned", 140505), ("onehot", 139841), ("none", 139457)])
def test_parameter_counts(mode, count):
    cfg = PredictorConfig(geometry_mode=mode)
    assert param_count(cfg) == count
    assert flatten_params(init_params(cfg), cfg).size == count


def test_manifest_layout():
    names = [n for n, _ in param_manifest(PredictorConfig())]
    assert names[0] == "embed" and names[-1] == "head.b2"
    assert len(linear_layers(PredictorConfig())) == 1 + 2 * 4 + 2
    assert "embed" not in [n for n, _ in param_manifest(PredictorConfig(geometry_mode="onehot"))]


def test_init():
    cfg = PredictorConfig()
    p = init_params(cfg, seed=3)
    w = p["block0.w1"]
    assert w.std() == pytest.approx(np.sqrt(2 / 128), rel=0.05)
    assert np.all(p["block0.b1"] == 0) and np.all(p["block0.ln1.g"] == 1)
    assert np.all(p["head.w2"] == 0)
    np.testing.assert_array_equal(init_params(cfg, 3)["proj.w"], p["proj.w"])
    he = init_params(PredictorConfig(head_out_init="he"), 3)
    assert np.any(he["head.w2"] != 0)


def test_untrained_network_predicts_zero_angle():
    cfg = PredictorConfig()
    a = forward(random_features(50, np.random.default_rng(0)), init_params(cfg), cfg)
    np.testing.assert_allclose(a, (ALPHA_MIN + ALPHA_MAX) / 2, atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        PredictorConfig(alpha_max=1.0)
    with pytest.raises(ValueError):
        PredictorConfig(geometry_mode="text")
    with pytest.raises(ValueError):
        PredictorConfig(dropout_rate=1.0)
    assert PredictorConfig.from_dict(SMALL.to_dict()) == SMALL


@given(seeds, st.floats(-3, 4))
def test_angles_strictly_inside_interval(seed, log_scale):
    rng = np.random.default_rng(seed)
    cfg = PredictorConfig(width=16, embed_dim=4, head_hidden=8, head_out_init="he")
    p = {k: v * 10.0**log_scale for k, v in init_params(cfg, seed).items()}
    a = forward(random_features(64, rng, 10.0**rng.uniform(-3, 6)), p, cfg)
    assert np.all(np.isfinite(a))
    assert np.all((a > ALPHA_MIN) & (a < ALPHA_MAX))


def test_non_finite_parameters_rejected():
    p = init_params(SMALL)
    p["block1.w2"][0, 0] = np.nan
    with pytest.raises(CheckpointError):
        forward(random_features(4, np.random.default_rng(0)), p, SMALL)
    with pytest.raises(CheckpointError):
        check_params(p, SMALL)


def test_bad_geometry_code():
    F = random_features(4, np.random.default_rng(0))
    F[0, 6] = 2
    with pytest.raises(ValueError):
        forward(F, init_params(SMALL), SMALL)


@pytest.mark.parametrize("mode", ["learned", "onehot", "none"])
def test_numpy_and_torch_agree(mode):
    cfg = PredictorConfig(width=16, embed_dim=4, head_hidden=8, geometry_mode=mode, head_out_init="he")
    rng = np.random.default_rng(4)
    p, F = init_params(cfg, 4), random_features(20, rng)
    masks = dropout_masks((1, 2, 3), 20, cfg)
    tp = {k: torch.tensor(v) for k, v in p.items()}
    for m in (None, masks):
        want = forward_logit(F, p, cfg, m)
        got = forward_logit(torch.tensor(F), tp, cfg, m).numpy()
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_dropout_masks():
    a, b = dropout_masks((0, 1, 2), 5, SMALL), dropout_masks((0, 1, 2), 5, SMALL)
    assert len(a) == SMALL.trunk_depth
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert set(np.unique(a[0])) <= {0.0, 1 / 0.95}
    assert not np.array_equal(a[0], dropout_masks((0, 1, 3), 5, SMALL)[0])
    big = dropout_masks((9,), 1000, PredictorConfig())[0]
    assert (big == 0).mean() == pytest.approx(0.05, abs=0.01)


def test_flatten_round_trip():
    p = init_params(SMALL, 1)
    q = unflatten_params(flatten_params(p, SMALL), SMALL)
    for k in p:
        np.testing.assert_array_equal(p[k], q[k])
    with pytest.raises(CheckpointError):
        unflatten_params(np.zeros(3), SMALL)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(SMALL, 2)
    path = save_checkpoint(p, SMALL, {"epoch": 7}, tmp_path / "m.ckpt")
    q, cfg, meta = load_checkpoint(path, expect=SMALL)
    assert cfg == SMALL and meta == {"epoch": 7}
    for k in p:
        np.testing.assert_array_equal(p[k], q[k])


def test_checkpoint_defects(tmp_path):
    path = save_checkpoint(init_params(SMALL), SMALL, None, tmp_path / "m.ckpt")
    raw = path.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    (tmp_path / "junk.ckpt").write_bytes(b"hello world, not a model")
    for name in ("short.ckpt", "junk.ckpt", "missing.ckpt"):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect=PredictorConfig(width=32, embed_dim=4, head_hidden=8))
    nan = bytearray(raw)
    nan[-8:] = np.array([np.nan]).tobytes()
    (tmp_path / "nan.ckpt").write_bytes(bytes(nan))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nan.ckpt")


@pytest.mark.parametrize("g", ALL_GEOMETRIES, ids=lambda g: g.label)
def test_neural_refinement_structure(g):
    P = ClosedPolygon(g, star_polygon(g, 12, np.random.default_rng(5)))
    cfg = PredictorConfig(width=16, embed_dim=4, head_hidden=8)
    Q = subdivide_neural(P, init_params(cfg), cfg, k=3)
    assert len(Q.vertices) == 12 * 8
    np.testing.assert_array_equal(Q.vertices[::8], P.vertices)
    # the first level is the classical warm-up
    W = subdivide_classical(P, WARMUP_MU, 1)
    np.testing.assert_allclose(Q.vertices[::4], W.vertices, atol=1e-15)
    assert len(subdivide_neural(P, init_params(cfg), cfg, k=0).vertices) == 12


def test_features_of_refined_polygons_feed_forward():
    g = "S2"
    P = star_polygon(g, 10, np.random.default_rng(6))
    a = forward(extract_features(P, g), init_params(SMALL), SMALL)
    assert a.shape == (10,)


@given(seeds, st.integers(2, 40), st.integers(2, 40))
def test_spectral_norm_matches_svd(seed, r, c):
    W = np.random.default_rng(seed).normal(size=(r, c))
    assert spectral_norm(W, 300) == pytest.approx(np.linalg.svd(W, compute_uv=False)[0], rel=1e-3)


def test_lipschitz_report():
    cfg = PredictorConfig(head_out_init="he")
    rep = lipschitz_estimate(init_params(cfg), cfg)
    assert set(rep.layer_norms) == set(linear_layers(cfg))
    assert rep.lipschitz == pytest.approx(np.prod(list(rep.layer_norms.values())))
    assert rep.c_prox == pytest.approx((rep.lipschitz + np.pi / 8) * 2 / np.pi)
    with pytest.raises(ValueError):
        lipschitz_estimate(init_params(cfg), cfg, iters=3)
