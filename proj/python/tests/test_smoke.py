"""Smoke tests for the Python bindings.

Small configurations only; the exhaustive suites live in the C++ tests and
the acceptance binary.
"""

import numpy as np
import pytest

import mwat


@pytest.fixture(scope="module")
def tiny_world():
    train, val = mwat.generate_dataset(seed=7, n_scenarios=80)
    ckpt = mwat.pretrain(train, epochs=6, lr=1e-3, seed=1)
    return train, val, ckpt


def test_dataset_shapes_and_determinism():
    a_train, a_val = mwat.generate_dataset(seed=3, n_scenarios=20)
    b_train, _ = mwat.generate_dataset(seed=3, n_scenarios=20)
    assert a_train.size == 16 and a_val.size == 4
    obs = a_train.observation(0)
    assert obs.shape == (4, 32, 32)
    assert obs.min() >= 0.0 and obs.max() <= 1.0
    np.testing.assert_array_equal(obs, b_train.observation(0))
    assert len(a_train.expert_waypoints(0)) == 6


def test_seeded_random_is_reproducible():
    a = mwat.seeded_random(11, [32], "normal", 0.0, 1.0)
    b = mwat.seeded_random(11, [32], "normal", 0.0, 1.0)
    np.testing.assert_array_equal(a, b)


def test_projection_budgets():
    rng = np.random.default_rng(0)
    v = rng.normal(size=24)
    for norm, measure in [
        ("linf", lambda x: np.abs(x).max()),
        ("l2", lambda x: np.linalg.norm(x)),
        ("l1", lambda x: np.abs(x).sum()),
    ]:
        p = mwat.project(v, norm, 0.5)
        assert measure(p) <= 0.5 + 1e-9
        np.testing.assert_allclose(mwat.project(p, norm, 0.5), p, atol=1e-12)


def test_dwaa_weights_sum_to_five():
    st = mwat.DwaaState(r=0.2, update_period=100)
    st.step_window([1.0, 1.0, 1.0, 1.0, 1.0])
    st.step_window([0.5, 0.9, 1.0, 1.1, 1.4])
    w = st.current_weights()
    assert abs(sum(w) - 5.0) < 1e-9
    assert all(x > 0 for x in w)


def test_training_reduces_loss_and_attack_raises_error(tiny_world):
    train, val, ckpt = tiny_world
    fresh = mwat.pretrain(train, epochs=0, seed=1)
    assert mwat.evaluate_loss(ckpt, val) < mwat.evaluate_loss(fresh, val)

    clean = mwat.mean_plan_error(ckpt, val, samples=16)
    attack = mwat.attack_config(method="pgd", norm="linf", steps=3, restarts=2, module_wise=True)
    attacked = mwat.mean_plan_error(ckpt, val, samples=16, attack=attack)
    assert attacked >= clean


def test_finetune_and_checkpoint_roundtrip(tiny_world, tmp_path):
    train, val, ckpt = tiny_world
    tuned = mwat.finetune(ckpt, train, method="ma2t", epochs=1, attack_steps=2, seed=2)
    assert tuned.method == "ma2t"
    path = tmp_path / "ckpt.mwck"
    mwat.save_checkpoint(str(path), tuned)
    loaded = mwat.load_checkpoint(str(path))
    assert loaded.content_hash() == tuned.content_hash()


def test_corruption_stays_in_range(tiny_world):
    train, _, _ = tiny_world
    obs = train.observation(0)
    for kind in ["contrast", "frost", "snow", "gaussian_noise", "shot_noise", "spatter"]:
        out = mwat.apply_corruption(obs, kind, severity=3, seed=5)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.shape == obs.shape


def test_closed_loop_scores(tiny_world):
    _, _, ckpt = tiny_world
    r = mwat.run_closed_loop(ckpt, episodes=4, episode_length=15, seed=3)
    assert 0.0 <= r["driving_score"] <= 1.0
    assert 0.0 <= r["completion_rate"] <= 1.0
