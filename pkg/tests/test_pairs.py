import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stereoloc.errors import DataError, DomainError
from stereoloc.geometry import KITTI_RIG, SphericalCoord, cartesian_to_spherical, depth_to_disparity
from stereoloc.pairs import (FEATURE_DIM, PairSample, PairTable, balance_pairs, build_pairs,
                             depth_from_spherical, flip_augment, flip_table, inject_knowledge,
                             knowledge_injection, null_pair, pairs_from_frame, read_pairs,
                             sample_ki_heights, write_pairs)
from stereoloc.skeleton import FLIP_PERMUTATION, NUM_JOINTS
from stereoloc.synth import FrameAnnotation, SceneConfig, SceneInstance, generate_frames, observe_person

J = NUM_JOINTS
B = KITTI_RIG.baseline_m


def _frame(centers, heights=None, right=None, noise=0.0, seed=0):
    """Frame with planar people at the given mid-hip positions, noise-free by default."""
    rng = np.random.default_rng(seed)
    heights = heights or [1.71] * len(centers)
    right = right or [True] * len(centers)
    insts = []
    for pid, (c, h, vr) in enumerate(zip(centers, heights, right)):
        left, rkp = observe_person(np.array(c, float), h, KITTI_RIG, noise, rng if noise else None)
        insts.append(SceneInstance(pid, np.array(c, float), h, True, vr, 0.0, left, rkp if vr else None))
    return FrameAnnotation(0, KITTI_RIG, insts)


def test_pair_counts_and_layout(rng):
    left = rng.normal(size=(3, J, 2))
    right = rng.normal(size=(2, J, 2))
    feats, li, ri, pv = build_pairs(left, right)
    assert feats.shape == (6, FEATURE_DIM)
    assert list(li) == [0, 0, 1, 1, 2, 2] and list(ri) == [0, 1, 0, 1, 0, 1]
    assert np.array_equal(feats[3, :2 * J], left[1].ravel())
    assert np.allclose(feats[3, 2 * J:], (left[1] - right[1]).ravel())


def test_identical_sets_give_zero_delta(rng):
    kp = rng.normal(size=(1, J, 2))
    feats, *_ = build_pairs(kp, kp)
    assert np.all(feats[0, 2 * J:] == 0)


def test_null_and_empty_pairs(rng):
    left = rng.normal(size=(1, J, 2))
    feats, li, ri, pv = build_pairs(left, np.zeros((0, J, 2)))
    assert feats.shape == (1, FEATURE_DIM) and ri[0] == -1 and np.all(feats[0, 2 * J:] == 0)
    assert np.array_equal(null_pair(left[0], np.ones(J, bool)), feats[0])
    feats, *_ = build_pairs(np.zeros((0, J, 2)), rng.normal(size=(2, J, 2)))
    assert feats.shape == (0, FEATURE_DIM)


def test_hidden_joints_contribute_zero(rng):
    left, right = rng.normal(size=(1, J, 2)), rng.normal(size=(1, J, 2))
    lv = np.ones((1, J), bool)
    rv = np.ones((1, J), bool)
    lv[0, 2] = False
    rv[0, 5] = False
    feats, _, _, pv = build_pairs(left, right, lv, rv)
    f = feats[0]
    assert np.all(f[4:6] == 0)
    assert np.all(f[2 * J + 4:2 * J + 6] == 0) and np.all(f[2 * J + 10:2 * J + 12] == 0)
    assert not pv[0, 2] and not pv[0, 5] and pv[0, 0]


def test_labels_and_targets():
    frame = _frame([[1.0, 0.8, 10.0], [-2.0, 0.8, 20.0]])
    pairs = pairs_from_frame(frame)
    assert len(pairs) == 4
    for p in pairs:
        assert p.ism_label == int(p.left_person_id == p.right_person_id)
        inst = frame.instance(p.left_person_id)
        assert p.gt == cartesian_to_spherical(inst.center3d)
    assert sum(p.ism_label for p in pairs) == 2


def test_noise_free_true_pair_delta_is_disparity():
    frame = _frame([[1.0, 0.8, 15.0]])
    (p,) = pairs_from_frame(frame)
    delta = p.features[2 * J:].reshape(J, 2)
    assert np.allclose(delta[:, 0], B / 15.0, rtol=1e-12) and np.allclose(delta[:, 1], 0.0, atol=1e-15)
    # in pixels this is the disparity
    assert delta[0, 0] * KITTI_RIG.focal_px == pytest.approx(depth_to_disparity(15.0, KITTI_RIG), rel=1e-12)


def test_mono_only_left_gets_null_pair():
    frame = _frame([[1.0, 0.8, 10.0]], right=[False])
    (p,) = pairs_from_frame(frame)
    assert p.is_null_pair and p.ism_label == 0 and np.all(p.features[2 * J:] == 0)


def test_extra_null_fraction():
    frame = _frame([[1.0, 0.8, 10.0], [-2.0, 0.8, 20.0]])
    pairs = pairs_from_frame(frame, null_fraction=1.0, rng=np.random.default_rng(0))
    assert sum(p.is_null_pair for p in pairs) == 2 and len(pairs) == 6


def _dummy(label, i, null=False):
    return PairSample(np.zeros(FEATURE_DIM), label, SphericalCoord(10.0, 0.0, 0.0), i,
                      None if null else i + label, np.ones(J, bool), np.ones(J, bool), 1.7,
                      is_null_pair=null)


def test_balance_examples():
    pairs = [_dummy(1, i) for i in range(10)] + [_dummy(0, i) for i in range(40)]
    out = balance_pairs(pairs, seed=3)
    assert sum(p.ism_label for p in out) == 10 and len(out) == 20
    assert [id(p) for p in balance_pairs(pairs, seed=3)] == [id(p) for p in out]
    even = [_dummy(1, i) for i in range(10)] + [_dummy(0, i) for i in range(10)]
    assert balance_pairs(even) == even
    rep = balance_pairs(pairs, seed=3, replicate=True)
    assert sum(p.ism_label for p in rep) == 40 and len(rep) == 80
    with pytest.raises(DomainError):
        balance_pairs([_dummy(0, 0)])


@given(st.integers(1, 30), st.integers(0, 60), st.integers(0, 5))
def test_balance_property(n_true, n_false, n_null):
    pairs = ([_dummy(1, i) for i in range(n_true)] + [_dummy(0, i) for i in range(n_false)]
             + [_dummy(0, i, null=True) for i in range(n_null)])
    out = balance_pairs(pairs, seed=1)
    non_null = [p for p in out if not p.is_null_pair]
    t = sum(p.ism_label for p in non_null)
    assert abs(t - (len(non_null) - t)) <= 1 or n_false == 0
    assert sum(p.is_null_pair for p in out) == n_null


def test_ki_examples():
    frame = _frame([[0.0, 0.0, 20.0]])
    (p,) = pairs_from_frame(frame)
    same = knowledge_injection(p, 1.71, KITTI_RIG)
    assert same.gt.r == pytest.approx(20.0, rel=1e-15)
    assert np.allclose(same.features, p.features, rtol=1e-12, atol=1e-15)
    short = knowledge_injection(p, 1.2, KITTI_RIG)
    tall = knowledge_injection(p, 2.0, KITTI_RIG)
    assert short.gt.r == pytest.approx(14.0351, abs=1e-4) and tall.gt.r == pytest.approx(23.3918, abs=1e-4)
    for q in (short, tall):
        z = depth_from_spherical([q.gt.r, q.gt.beta, q.gt.psi])
        assert np.allclose(q.features[2 * J::2], B / z, rtol=1e-12)
        assert np.array_equal(q.features[:2 * J], p.features[:2 * J])
        assert q.is_augmented and q.ism_label == 1


def test_ki_domain():
    (p,) = pairs_from_frame(_frame([[0.0, 0.0, 20.0]]))
    for h in (1.0, 2.2, 0.5):
        with pytest.raises(DomainError):
            knowledge_injection(p, h, KITTI_RIG)


def _table(n_frames=30, seed=0, noise=1.0):
    frames = generate_frames(SceneConfig(noise_px=noise), n_frames, seed)
    return PairTable.from_samples([p for f in frames for p in pairs_from_frame(f)])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_ki_preserves_left_half_and_spans_range(seed):
    table = _table(3, seed)
    hs = sample_ki_heights(np.random.default_rng(seed), len(table))
    out = inject_knowledge(table, hs, KITTI_RIG)
    assert np.array_equal(out.features[:, :2 * J], table.features[:, :2 * J])
    ratio = out.gt[:, 0] / table.gt[:, 0]
    assert np.all(ratio >= 1.2 / table.height - 1e-12) and np.all(ratio <= 2.0 / table.height + 1e-12)
    assert np.array_equal(out.gt[:, 1:], table.gt[:, 1:])


def test_ki_moves_disparity_noise_free():
    table = _table(10, 0, noise=0.0)
    hs = sample_ki_heights(np.random.default_rng(0), len(table))
    out = inject_knowledge(table, hs, KITTI_RIG)
    true = out.ism == 1
    z = depth_from_spherical(out.gt[true])
    dx = out.features[true, 2 * J::2]
    vis = out.pair_vis[true]
    assert np.allclose(np.where(vis, dx, B / z[:, None]), B / z[:, None], rtol=1e-10)


def test_flip_of_symmetric_setup_is_relabelled_original():
    # a person midway between the two cameras: each view is the mirror of the other,
    # so flipping returns the same features and target
    frame = _frame([[B / 2, 0.5, 12.0]])
    (p,) = pairs_from_frame(frame)
    f = flip_augment(p)
    assert (f.gt.r, f.gt.beta, f.gt.psi) == pytest.approx((p.gt.r, p.gt.beta, p.gt.psi), rel=1e-12)
    assert np.allclose(f.features, p.features, atol=1e-12)
    assert f.ism_label == p.ism_label


def test_flip_mirrors_single_view_pose():
    # left half of a flipped null pair is the mirrored, joint-relabelled original
    frame = _frame([[1.0, 0.5, 10.0]], right=[False])
    (p,) = pairs_from_frame(frame)
    f = flip_augment(p)
    perm = np.array(FLIP_PERMUTATION)
    lp = p.features[:2 * J].reshape(J, 2)
    assert np.allclose(f.features[:2 * J].reshape(J, 2), lp[perm] * [-1.0, 1.0])


def test_flip_gt_of_null_pair_negates_beta():
    frame = _frame([[1.0, 0.5, 10.0]], right=[False])
    (p,) = pairs_from_frame(frame)
    f = flip_augment(p)
    assert (f.gt.r, f.gt.beta, f.gt.psi) == pytest.approx((p.gt.r, -p.gt.beta, p.gt.psi))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_double_flip_is_identity(seed):
    table = _table(3, seed)
    twice = flip_table(flip_table(table))
    # joints seen by one camera only are dropped by the first flip
    full = ~np.any(table.left_vis != table.pair_vis, axis=1) | table.is_null
    for name in ("features", "gt", "gt_right", "height", "ism", "left_id", "right_id", "pair_vis"):
        a, b = getattr(table, name)[full], getattr(twice, name)[full]
        assert np.allclose(a, b, equal_nan=True, rtol=0, atol=1e-12), name
    four = flip_table(flip_table(twice))
    assert np.allclose(four.features, twice.features, rtol=0, atol=1e-12)


def test_flip_keeps_true_pair_disparity_positive():
    table = _table(10, 1, noise=0.0)
    out = flip_table(table)
    true = out.ism == 1
    z = depth_from_spherical(out.gt[true])
    dx = np.where(out.pair_vis[true], out.features[true, 2 * J::2], B / z[:, None])
    assert np.allclose(dx, B / z[:, None], rtol=1e-10)


def test_pairs_jsonl_round_trip(tmp_path):
    pairs = [p for f in generate_frames(SceneConfig(), 4, 0) for p in pairs_from_frame(f)]
    path = tmp_path / "p.jsonl"
    write_pairs(path, pairs)
    back = read_pairs(path)
    assert [q.to_dict() for q in back] == [p.to_dict() for p in pairs]


def test_pair_schema_errors(tmp_path):
    d = _dummy(1, 0).to_dict()
    d["features"] = d["features"][:-1]
    with pytest.raises(DataError):
        PairSample.from_dict(d)
    d = _dummy(1, 0).to_dict()
    d["ism_label"] = 3
    with pytest.raises(DataError):
        PairSample.from_dict(d)
