from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnn_mbrl.datagen import generate_dataset
from gnn_mbrl.gnn import (
    METRICS_HEADER,
    CheckpointError,
    ConfigError,
    GnnConfig,
    GnnModel,
    load_model,
    metrics_csv,
    param_shapes,
    split_episodes,
    save_model,
    train,
)
from gnn_mbrl.sim import WorldConfig, init_world

SMALL = GnnConfig(hidden_dim=8, seed=3)


def _batch(rng, B, action_dim=2):
    s = np.concatenate([rng.uniform(1, 9, (B, 3, 2)), rng.uniform(-3, 3, (B, 3, 2))], axis=-1)
    a = rng.uniform(-2, 2, (B, 2)) if action_dim == 2 else rng.integers(0, 9, B)
    s_next = s + rng.normal(0, 0.2, s.shape)
    r = -(rng.random(B) < 0.3).astype(float)
    return s, a, s_next, r


def _zero_update_output(model):
    model.params["update.W2"][:] = 0.0
    model.params["update.b2"][:] = 0.0
    return model


def test_shapes_follow_config():
    shapes = param_shapes(GnnConfig(hidden_dim=16, action_dim=9))
    assert shapes["node.W0"] == (5 + 9, 16)
    assert shapes["edge.W0"] == (2 * 16 + 3, 16)
    assert shapes["update.W2"] == (16, 4)
    assert shapes["reward.W2"] == (16, 1)
    assert len(shapes) == 4 * 3 * 2


def test_glorot_init_bounds_and_zero_bias():
    m = GnnModel(GnnConfig(hidden_dim=16, seed=1))
    for name, w in m.params.items():
        if ".W" in name:
            assert np.abs(w).max() <= np.sqrt(6 / sum(w.shape))
        else:
            assert not w.any()


@pytest.mark.parametrize("bad", [dict(hidden_dim=0), dict(pos_scale=0.0), dict(reward_loss_weight=-1.0), dict(action_dim=3)])
def test_config_invariants(bad):
    with pytest.raises(ConfigError):
        GnnConfig(**bad)


def test_normalize_examples():
    m = GnnModel(GnnConfig(pos_scale=10.0, vel_scale=6.0))
    assert not m.normalize(np.zeros((3, 4))).any()
    assert m.normalize(np.array([[10.0, 10.0, 6.0, -6.0]] * 3))[0].tolist() == [1.0, 1.0, 1.0, -1.0]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_normalize_round_trip(seed):
    m = GnnModel(GnnConfig())
    s = np.random.default_rng(seed).normal(0, 5, (3, 4))
    assert np.abs(m.denormalize(m.normalize(s)) - s).max() < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), discrete=st.booleans())
def test_residual_identity(seed, discrete):
    cfg = replace(SMALL, action_dim=9 if discrete else 2)
    model = _zero_update_output(GnnModel(cfg))
    s, a, _, _ = _batch(np.random.default_rng(seed), 5, cfg.action_dim)
    nxt, _ = model.forward(s, a)
    assert np.array_equal(nxt, s)
    roll, _ = model.rollout(s[0], a[:1].repeat(4, axis=0))
    assert all(np.array_equal(x, s[0]) for x in roll)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_non_ego_permutation_equivariance(seed):
    model = GnnModel(replace(SMALL, seed=seed % 1000))
    s, a, _, _ = _batch(np.random.default_rng(seed), 4)
    swapped = s[:, [0, 2, 1]]
    n1, r1 = model.forward(s, a)
    n2, r2 = model.forward(swapped, a)
    assert np.allclose(n2, n1[:, [0, 2, 1]], rtol=0, atol=1e-12)
    assert np.allclose(r1, r2, rtol=0, atol=1e-12)


def test_ego_is_distinguished():
    model = GnnModel(SMALL)
    s, a, _, _ = _batch(np.random.default_rng(0), 4)
    n1, _ = model.forward(s, a)
    n2, _ = model.forward(s[:, [1, 0, 2]], a)
    assert not np.allclose(n2, n1[:, [1, 0, 2]])


def test_nan_parameters_are_fatal():
    model = GnnModel(SMALL)
    model.params["edge.W1"][0, 0] = np.nan
    s, a, _, _ = _batch(np.random.default_rng(0), 2)
    with pytest.raises(FloatingPointError):
        model.forward(s, a)


def test_directional_derivative_matches_taylor():
    rng = np.random.default_rng(7)
    model = GnnModel(SMALL)
    batch = _batch(rng, 6)
    _, _, grads = model.loss_and_grad(*batch)
    f0 = model.loss(*batch)
    eps = 1e-6
    for _ in range(3):
        direction = {k: rng.normal(size=v.shape) for k, v in model.params.items()}
        moved = model.copy()
        for k in moved.params:
            moved.params[k] = moved.params[k] + eps * direction[k]
        analytic = sum(float((grads[k] * direction[k]).sum()) for k in grads)
        numeric = (moved.loss(*batch) - f0) / eps
        assert abs(numeric - analytic) <= 1e-3 * abs(analytic)


def test_loss_of_perfect_predictor_is_zero():
    model = GnnModel(SMALL)
    s, a, _, _ = _batch(np.random.default_rng(1), 4)
    nxt, r = model.forward(s, a)
    assert model.loss(s, a, nxt, r) == pytest.approx(0.0, abs=1e-20)


def test_loss_matches_explicit_summation():
    rng = np.random.default_rng(2)
    model = GnnModel(replace(SMALL, reward_loss_weight=0.7))
    s, a, s_next, r = _batch(rng, 1)
    nxt, r_hat = model.forward(s, a)
    P, V = model.cfg.pos_scale, model.cfg.vel_scale
    pos = vel = 0.0
    for i in range(3):
        for d in range(2):
            pos += ((nxt[0, i, d] - s_next[0, i, d]) / P) ** 2
            vel += ((nxt[0, i, 2 + d] - s_next[0, i, 2 + d]) / V) ** 2
    expected = pos / 6 + vel / 6 + 0.7 * (r_hat[0] - r[0]) ** 2
    assert model.loss(s, a, s_next, r) == pytest.approx(expected, rel=1e-9)
    terms = model.loss_terms(s, a, s_next, r)
    assert all(t >= 0 for t in terms)
    assert terms[0] + terms[1] + 0.7 * terms[2] == pytest.approx(model.loss(s, a, s_next, r), rel=1e-12)


def test_zero_reward_weight_ignores_reward_head():
    cfg = replace(SMALL, reward_loss_weight=0.0)
    model = GnnModel(cfg)
    s, a, s_next, r = _batch(np.random.default_rng(3), 5)
    base = model.loss(s, a, s_next, r)
    model.params["reward.b2"][:] = 123.0
    assert model.loss(s, a, s_next, r) == base
    _, _, grads = model.loss_and_grad(s, a, s_next, r)
    assert all(not grads[k].any() for k in grads if k.startswith("reward."))


def test_duplicated_sample_keeps_mean_gradient():
    model = GnnModel(SMALL)
    batch = _batch(np.random.default_rng(4), 1)
    doubled = tuple(np.concatenate([x, x]) for x in batch)
    _, _, g1 = model.loss_and_grad(*batch)
    _, _, g2 = model.loss_and_grad(*doubled)
    for k in g1:
        assert np.allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)


def _fd_check(model, batch, h=1e-5):
    """Central differences over every parameter entry; returns the max relative error."""
    _, _, grads = model.loss_and_grad(*batch)
    worst = 0.0
    for k, w in model.params.items():
        flat = w.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = model.loss(*batch)
            flat[i] = old - h
            down = model.loss(*batch)
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = grads[k].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst


@pytest.mark.parametrize("action_dim", [2, 9])
def test_gradients_match_finite_differences(action_dim):
    cfg = GnnConfig(hidden_dim=4, action_dim=action_dim, reward_loss_weight=0.5, seed=11)
    model = GnnModel(cfg)
    batch = _batch(np.random.default_rng(action_dim), 3, action_dim)
    assert _fd_check(model, batch) < 1e-4


def test_rollout_horizon_one_is_forward():
    model = GnnModel(SMALL)
    s, a, _, _ = _batch(np.random.default_rng(5), 1)
    states, rewards = model.rollout(s[0], a[:1])
    nxt, r = model.predict(s[0], a[0])
    assert np.array_equal(states[0], nxt) and rewards[0] == r
    with pytest.raises(ValueError):
        model.rollout(s[0], a[:0])


def test_rollout_feeds_predictions_back():
    model = GnnModel(SMALL)
    s, a, _, _ = _batch(np.random.default_rng(6), 3)
    states, _ = model.rollout(s[0], a)
    cur = s[0]
    for t in range(3):
        cur, _ = model.predict(cur, a[t])
        assert np.array_equal(states[t], cur)


# --- training ------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_ds():
    return generate_dataset(WorldConfig(), "continuous", 10, 12, seed=1)


def test_train_zero_epochs_returns_initial_model(tiny_ds):
    cfg = replace(SMALL, epochs=0)
    model, rows = train(tiny_ds, cfg)
    assert rows == []
    init = GnnModel(cfg)
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)


def test_train_mode_mismatch(tiny_ds):
    with pytest.raises(ConfigError):
        train(tiny_ds, replace(SMALL, action_dim=9, epochs=1))


def test_train_is_deterministic_and_logs_both_row_types(tiny_ds):
    cfg = replace(SMALL, epochs=3)
    m1, rows1 = train(tiny_ds, cfg, clock=None)
    m2, rows2 = train(tiny_ds, cfg, clock=None)
    assert metrics_csv(rows1) == metrics_csv(rows2)
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
    assert metrics_csv(rows1).splitlines()[0] == METRICS_HEADER
    assert [r.type for r in rows1] == ["train", "rollout"] * 3
    for r in rows1:
        assert r.time == 0.0
        assert all(np.isfinite(x) and x >= 0 for x in (r.error, r.v_error, r.reward_mse))
    assert m1.world_hash == tiny_ds.world.digest()


def test_training_makes_progress(tiny_ds):
    _, rows = train(tiny_ds, replace(SMALL, epochs=8, hidden_dim=16), clock=None)
    errs = [r.error for r in rows if r.type == "train"]
    assert errs[-1] < errs[0]


def test_split_keeps_a_training_episode():
    tr, ho = split_episodes(10, 0.1)
    assert tr.tolist() == list(range(9)) and ho.tolist() == [9]
    tr, ho = split_episodes(1, 0.5)
    assert tr.tolist() == [0] and ho.size == 0


# --- checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = GnnModel(replace(SMALL, action_dim=9, seed=8), world_hash="abc123")
    path = tmp_path / "m.ckpt"
    save_model(model, path)
    back = load_model(path)
    assert back.cfg == model.cfg and back.world_hash == "abc123"
    rng = np.random.default_rng(0)
    s, a, _, _ = _batch(rng, 100, 9)
    n1, r1 = model.forward(s, a)
    n2, r2 = back.forward(s, a)
    assert np.array_equal(n1, n2) and np.array_equal(r1, r2)
    assert path.read_bytes()[:8] == b"GNNCKPT1"


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    save_model(GnnModel(SMALL), path)
    buf = path.read_bytes()
    for cut in (5, 40, len(buf) - 1):
        path.write_bytes(buf[:cut])
        with pytest.raises(CheckpointError):
            load_model(path)


def test_bad_checkpoint_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    save_model(GnnModel(SMALL), path)
    path.write_bytes(b"NOTACKPT" + path.read_bytes()[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_model(path)


def test_config_block_disagreeing_with_shapes_names_layer(tmp_path):
    path = tmp_path / "m.ckpt"
    save_model(GnnModel(SMALL), path)
    buf = path.read_bytes().replace(b"hidden_dim=8", b"hidden_dim=9")
    path.write_bytes(buf)
    with pytest.raises(CheckpointError, match="node.W0"):
        load_model(path)


def test_rollout_error_grows_with_horizon(continuous_model):
    """Open-loop error against the simulator's recorded trajectory, averaged over 100 held-out starts."""
    ds, model = continuous_model.ds, continuous_model.model
    _, hold = split_episodes(ds.n_episodes, model.cfg.holdout_fraction)
    rng = np.random.default_rng(0)
    H = 10
    eps = rng.choice(hold, 100)
    ts = rng.integers(0, ds.episode_len - H, 100)
    s0 = ds.states[eps, ts].astype(np.float64)
    acts = np.stack([ds.actions[e, t : t + H] for e, t in zip(eps, ts)]).astype(np.float64)
    pred, _ = model.rollout(s0, acts)
    true = np.stack([ds.states[e, t + 1 : t + 1 + H] for e, t in zip(eps, ts)]).astype(np.float64)
    err = np.sqrt(((pred - true)[..., :2] ** 2).sum(axis=-1)).mean(axis=(0, 2))
    assert np.all(np.diff(err) > 0), err
