import json
import math

import numpy as np
import pytest

from trackbench.dataset import (
    EpisodeBuffer,
    EpisodeHeader,
    EpisodeRecord,
    FeatureSlot,
    MalformedEpisode,
    NonMonotonicTime,
    StepRecord,
    TooManyTargets,
    VersionMismatch,
    build_training_windows,
    make_target_features,
    read_episode,
    record_step,
    write_episode,
)
from trackbench.estimation import Belief, FilterBank, TargetStatus
from trackbench.world import AgentPose


def _bank(beliefs=None):
    bank = FilterBank(a=np.eye(2), q=np.eye(2), h=np.eye(2), r=np.eye(2) * 0.1,
                      sigma_bar=np.diag([math.e ** 10, math.e ** 10]),
                      init_sigma=np.eye(2) * 0.25)
    for j, (mu, sigma) in (beliefs or {}).items():
        bank.beliefs[j] = Belief(np.asarray(mu, float), np.asarray(sigma, float),
                                 TargetStatus.TRACKED)
    return bank


def _header(**kw):
    defaults = dict(map_path="maps/none.pgm", resolution=0.1, n_max=4, ego_size=4,
                    fov_radius=5.0, fov_half_angle=math.pi / 3, seed=7,
                    expert_id="frontier", n_targets=3)
    defaults.update(kw)
    return EpisodeHeader(**defaults)


def _step(t, rng=None, action=(0.5, -0.1)):
    rng = rng or np.random.default_rng(t)
    ego = rng.integers(0, 3, size=(4, 4)).astype(np.uint8)
    feats = [FeatureSlot((float(rng.normal()), float(rng.normal())),
                         (float(rng.normal()) ** 2 + 0.1, 0.0,
                          float(rng.normal()) ** 2 + 0.1),
             int(rng.integers(0, 2))) for _ in range(4)]
    return StepRecord(t, (float(rng.normal()), float(rng.normal()),
                          float(rng.uniform(-math.pi, math.pi))),
                      ego, feats, action, "explore", "frontier")


# ------------------------------------------------------ make_target_features

def test_features_all_placeholders():
    feats = make_target_features(_bank(), AgentPose(0.0, 0.0, 0.0), 6)
    assert len(feats) == 6
    assert all(f.mask == 1 for f in feats)
    scale = 20.0  # log det of diag(e^10, e^10)
    for f in feats:
        assert f.mu == (0.0, 0.0)
        assert f.sigma[0] == pytest.approx(math.e ** 10 / scale)
        assert f.sigma[1] == 0.0
        assert f.sigma[2] == pytest.approx(math.e ** 10 / scale)


def test_features_identity_pose():
    bank = _bank({0: ([1.0, 0.0], np.eye(2) * 0.01)})
    feats = make_target_features(bank, AgentPose(0.0, 0.0, 0.0), 2)
    assert feats[0].mu[0] == pytest.approx(1.0)
    assert feats[0].mu[1] == pytest.approx(0.0, abs=1e-12)
    assert feats[0].mask == 0
    assert feats[1].mask == 1  # placeholder


def test_features_rotated_pose():
    bank = _bank({0: ([0.0, 1.0], np.eye(2) * 0.01)})
    feats = make_target_features(bank, AgentPose(0.0, 0.0, math.pi / 2), 1)
    assert feats[0].mu[0] == pytest.approx(1.0)
    assert feats[0].mu[1] == pytest.approx(0.0, abs=1e-12)


def test_features_translation_and_rotation():
    # Hand-applied q(x, p): agent at (1, 1) facing +y sees (1, 2) one unit ahead.
    bank = _bank({0: ([1.0, 2.0], np.eye(2) * 0.01)})
    feats = make_target_features(bank, AgentPose(1.0, 1.0, math.pi / 2), 1)
    assert feats[0].mu[0] == pytest.approx(1.0)
    assert feats[0].mu[1] == pytest.approx(0.0, abs=1e-12)


def test_features_covariance_scaling_and_mask():
    sigma = np.diag([4.0, 9.0])
    bank = _bank({0: ([0.0, 0.0], sigma)})
    feats = make_target_features(bank, AgentPose(0.0, 0.0, 0.0), 1)
    assert feats[0].sigma == (4.0 / 20.0, 0.0, 9.0 / 20.0)
    assert feats[0].mask == 0  # log det of scaled covariance is well below 1
    # A belief as wide as the ceiling is masked like a placeholder.
    wide = _bank({0: ([0.0, 0.0], np.diag([math.e ** 10, math.e ** 10]))})
    feats = make_target_features(wide, AgentPose(0.0, 0.0, 0.0), 1)
    assert feats[0].mask == 1


def test_features_sorted_by_id_regardless_of_insertion():
    bank = _bank()
    bank.beliefs[5] = Belief(np.array([5.0, 0.0]), np.eye(2), TargetStatus.TRACKED)
    bank.beliefs[1] = Belief(np.array([1.0, 0.0]), np.eye(2), TargetStatus.TRACKED)
    feats = make_target_features(bank, AgentPose(0.0, 0.0, 0.0), 3)
    assert feats[0].mu[0] == pytest.approx(1.0)
    assert feats[1].mu[0] == pytest.approx(5.0)


def test_features_too_many_targets():
    bank = _bank({j: ([0.0, 0.0], np.eye(2)) for j in range(3)})
    with pytest.raises(TooManyTargets):
        make_target_features(bank, AgentPose(0.0, 0.0, 0.0), 2)


# ------------------------------------------------------------- record_step

def test_record_step_appends():
    buf = EpisodeBuffer()
    record_step(buf, _step(0))
    record_step(buf, _step(1))
    assert len(buf) == 2


def test_record_step_rejects_non_monotonic():
    buf = EpisodeBuffer()
    record_step(buf, _step(1))
    with pytest.raises(NonMonotonicTime):
        record_step(buf, _step(1))


def test_record_step_replay_equals_input():
    buf = EpisodeBuffer()
    steps = [_step(t) for t in range(500)]
    for s in steps:
        record_step(buf, s)
    assert buf.records == steps


# ----------------------------------------------------------- serialization

def test_episode_round_trip(tmp_path):
    record = EpisodeRecord(_header(), [_step(t) for t in range(3)])
    path = tmp_path / "ep.jsonl"
    write_episode(path, record)
    back = read_episode(path)
    assert back.header == record.header
    assert back.steps == record.steps


def test_episode_round_trip_many_random(tmp_path, rng):
    for i in range(20):
        n = int(rng.integers(1, 30))
        record = EpisodeRecord(_header(seed=i), [_step(t) for t in range(n)])
        path = tmp_path / f"ep{i}.jsonl"
        write_episode(path, record)
        back = read_episode(path)
        assert back.header == record.header and back.steps == record.steps


def test_episode_write_is_deterministic(tmp_path):
    record = EpisodeRecord(_header(), [_step(t) for t in range(5)])
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_episode(p1, record)
    write_episode(p2, record)
    assert p1.read_bytes() == p2.read_bytes()


def test_episode_version_mismatch(tmp_path):
    record = EpisodeRecord(_header(), [_step(0)])
    path = tmp_path / "ep.jsonl"
    write_episode(path, record)
    lines = path.read_text().splitlines()
    head = json.loads(lines[0])
    head["version"] = 2
    path.write_text("\n".join([json.dumps(head)] + lines[1:]) + "\n")
    with pytest.raises(VersionMismatch):
        read_episode(path)


def test_episode_corrupt_base64_names_line(tmp_path):
    record = EpisodeRecord(_header(), [_step(t) for t in range(3)])
    path = tmp_path / "ep.jsonl"
    write_episode(path, record)
    lines = path.read_text().splitlines()
    step = json.loads(lines[2])
    step["ego_map"] = "@@@not-base64@@@"
    lines[2] = json.dumps(step)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MalformedEpisode, match="line 3"):
        read_episode(path)


def test_write_rejects_empty_episode(tmp_path):
    with pytest.raises(ValueError):
        write_episode(tmp_path / "e.jsonl", EpisodeRecord(_header(), []))


# ------------------------------------------------------------------ windows

def test_window_count_formula():
    record = EpisodeRecord(_header(), [_step(t) for t in range(100)])
    windows = build_training_windows(record, 2, 16)
    assert len(windows) == 100 - 16 - 2 + 2


def test_window_none_when_too_short():
    record = EpisodeRecord(_header(), [_step(t) for t in range(16)])
    assert build_training_windows(record, 2, 16) == []


def test_window_timesteps_and_stripping():
    record = EpisodeRecord(_header(), [_step(t) for t in range(30)])
    for win in build_training_windows(record, 3, 5):
        t = win.decision_t
        assert [o.t for o in win.observations] == [t - 2, t - 1, t]
        assert all(o.action is None for o in win.observations)
        assert len(win.actions) == 5


def test_window_actions_reconstruct_stream():
    steps = [_step(t, action=(float(t), float(-t))) for t in range(40)]
    record = EpisodeRecord(_header(), steps)
    t_o, t_a = 2, 7
    windows = build_training_windows(record, t_o, t_a)
    for win in windows:
        t = win.decision_t
        assert win.actions == [(float(k), float(-k)) for k in range(t, t + t_a)]
    # strided reconcatenation of first actions covers the stream
    firsts = [w.actions[0] for w in windows]
    assert firsts == [(float(t), float(-t)) for t in range(t_o - 1, 40 - t_a + 1)]
