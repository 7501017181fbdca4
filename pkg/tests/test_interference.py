from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iakrc.interference import (DEFAULT_DIMS, IntentNet, IntentSample, ThreatParams, TrainingError,
                                angle_between, base_influence, effective_distance, enemy_field, featurize,
                                influence_at, intent_forward, intent_loss, loss_and_gradients, mean_loss,
                                predict_intent_angle, read_samples_csv, straight_line_samples, threat_level,
                                train_intent, write_samples_csv)
from iakrc.world import ENEMY, EntityState

P = ThreatParams()


def _enemy(pos=(5, 5), trajectory=(), attacks=0, health=1.0):
    e = EntityState(0, ENEMY, pos, health=health)
    e.trajectory.extend(trajectory)
    e.attack_steps.extend(range(attacks))
    return e


def _veteran():
    # 50 positions, the last ten moving 3 cells per step
    return _enemy(pos=(147, 0), trajectory=[(3 * k, 0) for k in range(50)], attacks=5)


def test_threat_vectors():
    assert threat_level(_veteran()) == 0.875
    assert threat_level(_enemy()) == 0.25
    assert threat_level(_enemy(health=0.0)) == 0.0
    assert base_influence(_veteran(), P) == 1.75


def test_threat_components_clamp():
    e = _enemy(trajectory=[(7 * k, 0) for k in range(60)], attacks=30)
    assert threat_level(e) == 1.0


def test_base_influence_scales():
    e = _veteran()
    assert base_influence(e, ThreatParams(i_config=0.0)) == 0.0
    assert base_influence(e, ThreatParams(i_config=4.0)) == 2 * base_influence(e, P)


def test_threat_params_validation():
    for bad in (dict(lambda_base=0.0), dict(influence_range=0.0), dict(alpha=-1.0), dict(i_config=-1.0)):
        with pytest.raises(ValueError):
            ThreatParams(**bad)


def test_effective_distance_spots():
    assert effective_distance(4, 0.0, 0.5) == 4
    assert effective_distance(4, math.pi, 0.5) == 8
    assert effective_distance(2, math.pi / 2, 0.5) == pytest.approx(3, abs=1e-15)


def test_influence_spots():
    e = _enemy(trajectory=[(5, 5)] * 50, attacks=10)  # T = (1 + 1 + 1 + 0) / 4
    assert influence_at((5, 5), e, None, P, intent=np.zeros(2)) == base_influence(e, P)
    e2 = _enemy()
    p = ThreatParams(i_config=8.0)  # I_base = 8 * 0.25 = 2
    assert influence_at((6, 5), e2, None, p, intent=np.array([1.0, 0.0])) == pytest.approx(2.0 * math.exp(-0.3), rel=1e-12)
    assert 2.0 * math.exp(-0.3) == pytest.approx(1.4816, abs=1e-4)
    assert influence_at((11, 5), e2, None, p, intent=np.zeros(2)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.floats(0.01, 2.0))
def test_directional_and_radial_monotonicity(d, alpha):
    p = ThreatParams(alpha=alpha, influence_range=10.0)
    e = _enemy(pos=(0, 0))
    vals = []
    for th in np.linspace(0, math.pi, 40):
        intent = np.array([math.cos(th), math.sin(th)])
        assert angle_between(intent, (1.0, 0.0)) == pytest.approx(th, abs=1e-7)
        vals.append(influence_at((d, 0), e, None, p, intent=intent))
    assert all(a > b for a, b in zip(vals, vals[1:]))
    east = np.array([1.0, 0.0])
    assert influence_at((d + 1, 0), e, None, p, intent=east) < influence_at((d, 0), e, None, p, intent=east)


def test_field_matches_scalar_route():
    rng = np.random.default_rng(3)
    e = _enemy(pos=(6, 4), trajectory=[(6, k % 3) for k in range(20)], attacks=3, health=0.7)
    intent = rng.normal(size=2)
    field = enemy_field(e, intent, P, (10, 14))
    for y in range(10):
        for x in range(14):
            assert field[y, x] == pytest.approx(influence_at((x, y), e, None, P, intent=intent), rel=1e-12, abs=1e-15)
    assert field.min() >= 0
    far = np.hypot(*np.meshgrid(np.arange(14) - 6, np.arange(10) - 4)) > P.influence_range
    assert (field[far] == 0).all()


def test_field_linearity_in_i_config():
    e = _enemy(pos=(3, 4), trajectory=[(k, 4) for k in range(30)], attacks=2)
    intent = np.array([0.3, -1.0])
    a = enemy_field(e, intent, ThreatParams(i_config=1.0), (8, 8))
    b = enemy_field(e, intent, ThreatParams(i_config=3.0), (8, 8))
    np.testing.assert_allclose(b, 3 * a, rtol=1e-12)


def test_field_of_distant_enemy_is_zero():
    assert not enemy_field(_veteran(), np.zeros(2), P, (8, 8)).any()


def test_intent_angles():
    e = _enemy(pos=(5, 5))
    net = IntentNet.zeros()
    assert predict_intent_angle(net, e, (8, 5), intent=np.array([1.0, 0.0])) == 0.0
    assert predict_intent_angle(net, e, (5, 2), intent=np.array([1.0, 0.0])) == pytest.approx(math.pi / 2)
    assert predict_intent_angle(net, e, (5, 2)) == 0.0  # zero net, degenerate vector


def test_featurize_layout():
    e = _enemy(pos=(4, 4), trajectory=[(1, 4), (2, 4), (3, 4), (4, 4)], health=0.5)
    f = featurize(e)
    assert f.shape == (21,)
    assert list(f[-9:-1]) == [-3, 0, -2, 0, -1, 0, 0, 0]
    assert f[-1] == 0.5


def test_zero_and_passthrough_nets():
    x = np.arange(21, dtype=float)
    np.testing.assert_array_equal(intent_forward(IntentNet.zeros(), x), [0.0, 0.0])
    w1 = np.zeros((21, 4))
    w1[0, 0], w1[1, 1], w1[0, 2], w1[1, 3] = 1, 1, -1, -1  # relu(x) - relu(-x) = x
    w2 = np.zeros((4, 2))
    w2[0, 0], w2[1, 1], w2[2, 0], w2[3, 1] = 1, 1, -1, -1
    net = IntentNet([w1, w2], [np.zeros(4), np.zeros(2)])
    for v in ([3.0, -2.0], [-0.5, 7.25]):
        x = np.zeros(21)
        x[:2] = v
        np.testing.assert_array_equal(intent_forward(net, x), v)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_forward_bounded(seed):
    rng = np.random.default_rng(seed)
    net = IntentNet([rng.uniform(-1, 1, (a, b)) for a, b in zip(DEFAULT_DIMS, DEFAULT_DIMS[1:])],
                    [rng.uniform(-1, 1, b) for b in DEFAULT_DIMS[1:]])
    x = rng.uniform(-1, 1, 21)
    out = intent_forward(net, x)
    bound = 22 * 129 * 65 * 2  # |x|_1 + bias per layer, widths multiplied
    assert np.isfinite(out).all() and np.abs(out).max() <= bound


def test_loss_examples():
    assert intent_loss((1, 0), (1, 0)) == pytest.approx(0.0, abs=1e-7)
    assert intent_loss((1, 0), (0, 1)) == 1.0
    assert intent_loss((1, 0), (-1, 0)) == pytest.approx(2.0, abs=1e-7)
    assert intent_loss((0, 0), (1, 0)) == 1.0


@given(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_loss_range(p, t):
    assert 0.0 <= intent_loss(p, t) <= 2.0


def _fd_check(seed):
    rng = np.random.default_rng(seed)
    net = IntentNet.init(rng, (21, 8, 4, 2))
    for b in net.biases:
        b[:] = rng.normal(0, 0.1, b.shape)
    x = rng.normal(size=(16, 21))
    y = rng.normal(size=(16, 2))
    _, grads = loss_and_gradients(net, x, y)
    h = 1e-5
    worst = 0.0
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = mean_loss(net, x, y)
            p[idx] = old - h
            down = mean_loss(net, x, y)
            p[idx] = old
            fd = (up - down) / (2 * h)
            err = abs(fd - g[idx]) / max(1e-6, abs(fd) + abs(g[idx]))
            worst = max(worst, err)
    return worst


def test_gradients_match_finite_differences():
    assert _fd_check(0) <= 1e-4


def test_training_straight_east():
    rng = np.random.default_rng(1)
    data = straight_line_samples(200, rng, headings=[(1, 0)])
    assert all((s.target == (1, 0)).all() for s in data)
    net = IntentNet.init(np.random.default_rng(2))
    history = []
    train_intent(net, data, 30, rng=np.random.default_rng(3), history=history)
    assert [e for e, _ in history] == list(range(1, 31))
    assert history[-1][1] < 0.1


def test_zero_epochs_is_identity():
    net = IntentNet.init(np.random.default_rng(0))
    data = straight_line_samples(10, np.random.default_rng(1))
    same = train_intent(net, data, 0)
    for a, b in zip(net.params, same.params):
        np.testing.assert_array_equal(a, b)


def test_single_sample_overfits():
    s = IntentSample(np.linspace(-1, 1, 21), np.array([0.6, -0.8]))
    net = train_intent(IntentNet.init(np.random.default_rng(4)), [s], 400, lr=5e-3, batch_size=1)
    assert mean_loss(net, s.input[None], s.target[None]) < 1e-3


def test_training_rejects_bad_input():
    net = IntentNet.init(np.random.default_rng(0))
    with pytest.raises(ValueError):
        train_intent(net, [], 1)
    bad = [IntentSample(np.full(21, np.nan), np.array([1.0, 0.0]))]
    with pytest.raises(TrainingError):
        train_intent(net, bad, 1)


def test_net_json_roundtrip(tmp_path):
    net = IntentNet.init(np.random.default_rng(5))
    net.save(tmp_path / "net.json")
    back = IntentNet.load(tmp_path / "net.json")
    assert back.dims == DEFAULT_DIMS
    x = np.random.default_rng(6).normal(size=21)
    np.testing.assert_array_equal(intent_forward(net, x), intent_forward(back, x))
    with pytest.raises(ValueError):
        IntentNet.from_json({"layers": [{"shape": [2, 2], "weights": [1], "bias": [0, 0]}]})


def test_samples_csv_roundtrip(tmp_path):
    data = straight_line_samples(5, np.random.default_rng(0))
    write_samples_csv(tmp_path / "s.csv", data)
    back = read_samples_csv(tmp_path / "s.csv")
    assert len(back) == 5
    for a, b in zip(data, back):
        np.testing.assert_array_equal(a.input, b.input)
        np.testing.assert_array_equal(a.target, b.target)
