import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from poselift.gradcheck import finite_diff_check
from poselift.metrics import (
    LossConfig,
    MetricsReport,
    acceleration_error,
    aggregate_report,
    mpjpe,
    p_mpjpe,
    pck_auc,
    pck_curve,
    position_loss,
    procrustes_align,
    total_loss,
    velocity_loss,
)
from poselift.tensor import Tensor


def T64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def rand_pose(rng, T=None, J=None):
    T = T or int(rng.integers(1, 9))
    J = J or int(rng.integers(2, 18))
    return rng.normal(scale=200, size=(T, J, 3))


# ----- losses -------------------------------------------------------------


def test_position_loss_examples():
    assert float(position_loss(T64(np.zeros((1, 1, 3))), T64(np.zeros((1, 1, 3)))).data) == 0
    assert float(position_loss(T64([[[3.0, 4.0, 0.0]]]), T64(np.zeros((1, 1, 3)))).data) == 5.0
    with pytest.raises(ValueError):
        position_loss(T64(np.zeros((2, 1, 3))), T64(np.zeros((1, 1, 3))))


def _loop_position(p, g):
    total = 0.0
    for t in range(p.shape[0]):
        for j in range(p.shape[1]):
            total += math.sqrt(sum((p[t, j, c] - g[t, j, c]) ** 2 for c in range(3)))
    return total


def _loop_velocity(p, g):
    total = 0.0
    for t in range(1, p.shape[0]):
        for j in range(p.shape[1]):
            total += math.sqrt(sum(((p[t, j, c] - p[t - 1, j, c]) - (g[t, j, c] - g[t - 1, j, c])) ** 2 for c in range(3)))
    return total


def test_losses_match_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(10):
        p, g = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
        assert abs(float(position_loss(T64(p), T64(g)).data) - _loop_position(p, g)) < 1e-6
        assert abs(float(velocity_loss(T64(p), T64(g)).data) - _loop_velocity(p, g)) < 1e-6
    # batch dimension is averaged
    p, g = rng.normal(size=(4, 2, 3, 3)), rng.normal(size=(4, 2, 3, 3))
    expected = np.mean([_loop_position(p[b], g[b]) for b in range(4)])
    assert abs(float(position_loss(T64(p), T64(g)).data) - expected) < 1e-9


def test_velocity_loss_cases():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(5, 4, 3))
    offsets = rng.normal(size=(1, 1, 3))
    assert float(velocity_loss(T64(g + offsets), T64(g)).data) < 1e-12
    assert float(velocity_loss(T64(g[:1] + 1), T64(g[:1])).data) == 0


def test_total_loss_combination():
    rng = np.random.default_rng(2)
    p, g = rng.normal(size=(3, 2, 3)), rng.normal(size=(3, 2, 3))
    pos = float(position_loss(T64(p), T64(g)).data)
    vel = float(velocity_loss(T64(p), T64(g)).data)
    assert float(total_loss(T64(p), T64(g), LossConfig(0.0)).data) == pos
    assert abs(float(total_loss(T64(p), T64(g), LossConfig(1.0)).data) - (pos + vel)) < 1e-12
    assert float(total_loss(T64(g), T64(g)).data) == 0
    with pytest.raises(ValueError):
        LossConfig(-1.0)


def test_total_loss_gradient():
    rng = np.random.default_rng(3)
    g = T64(rng.normal(size=(2, 4, 3, 3)))
    rep = finite_diff_check(lambda p: total_loss(p, g, LossConfig(0.7)), T64(rng.normal(size=(2, 4, 3, 3))))
    assert rep.max_rel_err < 1e-6


# ----- P1 / P2 ------------------------------------------------------------


def test_mpjpe_examples():
    gt = np.random.default_rng(0).normal(size=(4, 5, 3))
    assert mpjpe(gt + np.array([10.0, -3.0, 7.0]), gt) == pytest.approx(0, abs=1e-12)
    assert mpjpe(np.array([[[0, 0, 0], [3, 4, 0]]], float), np.zeros((1, 2, 3))) == 2.5


def _loop_mpjpe(p, g, root=0):
    errs = []
    for t in range(p.shape[0]):
        for j in range(p.shape[1]):
            d = (p[t, j] - p[t, root]) - (g[t, j] - g[t, root])
            errs.append(math.sqrt(float(d @ d)))
    return sum(errs) / len(errs), errs


def test_mpjpe_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        g = rand_pose(rng)
        p = g + rng.normal(scale=30, size=g.shape)
        root = int(rng.integers(g.shape[1]))
        assert abs(mpjpe(p, g, root) - _loop_mpjpe(p, g, root)[0]) < 1e-6


def test_p_mpjpe_rigid_copy_is_zero():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = rand_pose(rng)
        R = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
        p = g @ R.T + rng.normal(scale=500, size=3)
        assert p_mpjpe(p, g) < 1e-6
        assert p_mpjpe(p, g, rigid_only=True) < 1e-6
        assert p_mpjpe(1.7 * p, g) < 1e-6


def test_p_mpjpe_not_above_mpjpe():
    rng = np.random.default_rng(3)
    for _ in range(100):
        g = rand_pose(rng)
        p = g + rng.normal(scale=float(rng.uniform(1, 100)), size=g.shape)
        assert p_mpjpe(p, g) <= mpjpe(p, g) + 1e-9


def test_metrics_invariant_under_shared_rigid_motion():
    rng = np.random.default_rng(4)
    g = rand_pose(rng, T=5, J=7)
    p = g + rng.normal(scale=40, size=g.shape)
    R = Rotation.random(random_state=5).as_matrix()
    t = rng.normal(scale=300, size=3)
    assert abs(mpjpe(p @ R.T + t, g @ R.T + t) - mpjpe(p, g)) < 1e-6
    assert abs(p_mpjpe(p @ R.T + t, g @ R.T + t) - p_mpjpe(p, g)) < 1e-6


def test_metrics_scale_with_both_inputs():
    rng = np.random.default_rng(6)
    g = rand_pose(rng, T=6, J=5)
    p = g + rng.normal(scale=40, size=g.shape)
    c = 2.5
    assert mpjpe(c * p, c * g) == pytest.approx(c * mpjpe(p, g), rel=1e-12)
    assert p_mpjpe(c * p, c * g) == pytest.approx(c * p_mpjpe(p, g), rel=1e-9)
    assert acceleration_error(c * p, c * g) == pytest.approx(c * acceleration_error(p, g), rel=1e-12)


def _planar_grid_oracle(p, g, with_scale, allow_reflection):
    """Best squared-error in-plane alignment by exhaustive search over angle."""
    p2, g2 = p[:, :2] - p[:, :2].mean(0), g[:, :2] - g[:, :2].mean(0)
    best = (np.inf, None)
    mirrors = [np.eye(2), np.diag([1.0, -1.0])] if allow_reflection else [np.eye(2)]
    for M in mirrors:
        for theta in np.arange(0, 2 * np.pi, 1e-3):
            c, s = np.cos(theta), np.sin(theta)
            q = p2 @ M.T @ np.array([[c, -s], [s, c]]).T
            scale = max((q * g2).sum() / (q * q).sum(), 0.0) if with_scale else 1.0
            r = scale * q - g2
            sq = (r * r).sum()
            if sq < best[0]:
                best = (sq, np.linalg.norm(r, axis=1).mean())
    return best[1]


@pytest.mark.parametrize("with_scale", [False, True])
def test_planar_two_joint_procrustes_vs_grid(with_scale):
    # grid quantization (5e-4 rad) times joint radius must stay under 0.01 mm, hence ~10 mm toys
    rng = np.random.default_rng(7)
    for _ in range(5):
        g = np.c_[rng.normal(scale=10, size=(2, 2)), np.zeros(2)]
        p = np.c_[rng.normal(scale=10, size=(2, 2)), np.zeros(2)]
        oracle = _planar_grid_oracle(p, g, with_scale, allow_reflection=False)
        assert abs(p_mpjpe(p[None], g[None], rigid_only=not with_scale) - oracle) < 0.01


def test_planar_three_joint_procrustes_vs_grid():
    # a 3D rotation by pi about an in-plane axis mirrors a planar pose, so the oracle searches reflections too
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = np.c_[rng.normal(scale=10, size=(3, 2)), np.zeros(3)]
        p = np.c_[rng.normal(scale=10, size=(3, 2)), np.zeros(3)]
        for rigid in (True, False):
            oracle = _planar_grid_oracle(p, g, not rigid, allow_reflection=True)
            assert abs(p_mpjpe(p[None], g[None], rigid_only=rigid) - oracle) < 0.01


def test_procrustes_degenerate_frame_translates_only():
    g = np.random.default_rng(9).normal(size=(1, 4, 3))
    p = np.tile(np.array([5.0, 5.0, 5.0]), (1, 4, 1))
    aligned = procrustes_align(p, g)
    np.testing.assert_allclose(aligned, np.tile(g.mean(axis=1, keepdims=True), (1, 4, 1)))


def test_procrustes_never_reflects():
    rng = np.random.default_rng(10)
    g = rng.normal(size=(1, 6, 3))
    mirrored = g * np.array([-1.0, 1.0, 1.0])
    assert p_mpjpe(mirrored, g) > 1e-3


# ----- PCK / AUC / acceleration ------------------------------------------


def test_pck_examples():
    assert pck_curve(np.array([100.0, 200.0]), [150.0])[0] == 50.0
    # strict comparison at the threshold itself
    assert pck_curve(np.array([150.0]), [150.0])[0] == 0.0
    gt = np.zeros((1, 3, 3))
    pck, auc = pck_auc(gt, gt)
    assert pck == 100.0
    assert auc == pytest.approx(30 / 31 * 100, abs=1e-12)


def _loop_pck_auc(p, g, root):
    _, errs = _loop_mpjpe(p, g, root)
    pck = 100.0 * sum(e < 150 for e in errs) / len(errs)
    auc = sum(100.0 * sum(e < th for e in errs) / len(errs) for th in range(0, 151, 5)) / 31
    return pck, auc


def _loop_accel(p, g):
    vals = []
    for t in range(1, p.shape[0] - 1):
        for j in range(p.shape[1]):
            d = (g[t - 1, j] - 2 * g[t, j] + g[t + 1, j]) - (p[t - 1, j] - 2 * p[t, j] + p[t + 1, j])
            vals.append(math.sqrt(float(d @ d)))
    return sum(vals) / len(vals) if vals else 0.0


def test_pck_auc_accel_loop_oracles():
    rng = np.random.default_rng(11)
    for _ in range(30):
        g = rand_pose(rng)
        p = g + rng.normal(scale=float(rng.uniform(10, 150)), size=g.shape)
        pck, auc = pck_auc(p, g)
        lp, la = _loop_pck_auc(p, g, 0)
        assert abs(pck - lp) < 1e-6 and abs(auc - la) < 1e-6
        assert 0 <= auc <= pck <= 100
        assert abs(acceleration_error(p, g) - _loop_accel(p, g)) < 1e-6


def test_acceleration_trivial_cases():
    t = np.arange(6, dtype=float)[:, None, None]
    g = t * np.array([1.0, 2.0, 3.0]) + np.ones((6, 4, 3))
    p = t * np.array([-4.0, 0.5, 1.0])
    assert acceleration_error(p + 0 * g, g) == 0
    assert acceleration_error(g, g) == 0
    assert acceleration_error(g[:2], g[:2] + 1) == 0


# ----- reports ------------------------------------------------------------


def test_report_single_pair_and_round_trip():
    rng = np.random.default_rng(12)
    g = rand_pose(rng, T=6, J=5)
    p = g + rng.normal(scale=20, size=g.shape)
    rep = aggregate_report([(p, g, "walk")])
    assert rep.per_action["walk"]["mpjpe_mm"] == rep.mpjpe_mm
    assert rep.per_action["walk"]["p_mpjpe_mm"] == rep.p_mpjpe_mm
    assert abs(np.mean(rep.per_joint) - rep.mpjpe_mm) < 1e-9
    assert MetricsReport.from_dict(rep.to_dict()) == rep
    with pytest.raises(ValueError):
        aggregate_report([])


def test_report_frame_weighted_actions():
    g = np.zeros((4, 2, 3))
    p10, p30 = g.copy(), g.copy()
    p10[:, 1, 0] = 20.0  # joint errors (0, 20) -> 10
    p30[:, 1, 0] = 60.0
    rep = aggregate_report([(p10, g, "a"), (p30, g, "b")])
    assert rep.per_action["a"]["mpjpe_mm"] == 10 and rep.per_action["b"]["mpjpe_mm"] == 30
    assert rep.mpjpe_mm == 20
    assert list(rep.per_action) == ["a", "b"]
