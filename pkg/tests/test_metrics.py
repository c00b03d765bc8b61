import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhparse.metrics import (VOL_THRESHOLDS, SceneEval, ap_p, ap_p_vol, average_box_iou, average_precision, box_iou,
                             category_ious, evaluate, match, mean_average_iou, part_overlap, pcp, person_parts)
from mhparse.scene import SceneConfig, generate_scene
from helpers import random_scene
from oracles import brute_ap, loop_closeness, loop_overlap, loop_pcp


def person(shape, cells):
    m = np.zeros(shape, int)
    for (y, x), c in cells.items():
        m[y, x] = c
    return m


def test_part_overlap_examples():
    a = person((4, 4), {(0, 0): 1, (0, 1): 2})
    assert part_overlap(a, a) == 1.0
    assert part_overlap(a, person((4, 4), {(3, 3): 1})) == 0.0
    assert part_overlap(np.zeros((2, 2)), np.zeros((2, 2))) == 0.0
    gt = np.zeros((1, 20), int)
    gt[0, :5] = 1          # category 1: 5 px
    gt[0, 5:10] = 2        # category 2: 5 px
    pred = np.zeros((1, 20), int)
    pred[0, :4] = 1        # IOU 4/5
    pred[0, 5:7] = 2       # IOU 2/5
    assert part_overlap(pred, gt) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        category_ious(np.zeros((2, 2)), np.zeros((3, 2)))


@given(st.integers(0, 10 ** 6))
def test_overlap_matches_loop(seed):
    s = random_scene(np.random.default_rng(seed))
    for p in s.preds:
        for g in s.gts:
            assert part_overlap(p, g) == pytest.approx(loop_overlap(p, g), abs=1e-12)


def test_ap_examples():
    rng = np.random.default_rng(0)
    scenes = [random_scene(rng) for _ in range(5)]
    perfect = [SceneEval(list(s.gts), list(rng.uniform(size=len(s.gts))), s.gts) for s in scenes]
    for t in (0.1, 0.5, 0.9):
        assert ap_p(perfect, t) == 1.0
    assert ap_p_vol(perfect) == 1.0
    assert pcp(perfect, 0.5) == 1.0
    empty = [SceneEval([], [], s.gts) for s in scenes]
    assert ap_p(empty, 0.5) == 0.0 and pcp(empty) == 0.0
    assert ap_p(SceneEval([], [], []), 0.5) == 1.0
    assert ap_p(SceneEval([scenes[0].gts[0]], [0.5], []), 0.5) == 0.0
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            ap_p(scenes, bad)


def test_ap_vol_step_counting():
    gt = np.zeros((1, 20), int)
    gt[0, :] = 1
    pred = np.zeros((1, 20), int)
    pred[0, :11] = 1                     # overlap 0.55: TP up to threshold 0.5
    s = SceneEval([pred], [0.9], [gt])
    assert [ap_p(s, t) for t in VOL_THRESHOLDS] == [1.0] * 5 + [0.0] * 4
    assert ap_p_vol(s) == pytest.approx(5 / 9)


def test_average_precision_hand_example():
    # ranks: TP, FP, TP with 3 GTs -> 1/3 * 1 + 1/3 * 2/3
    assert average_precision([True, False, True], [0.9, 0.8, 0.7], 3) == pytest.approx(1 / 3 + 2 / 9)
    # low-ranked TP lifts precision of nothing above it
    assert average_precision([False, True], [0.9, 0.8], 1) == pytest.approx(0.5)


@given(st.integers(0, 10 ** 6), st.sampled_from([0.1, 0.3, 0.5, 0.7]))
def test_ap_matches_exhaustive_oracle(seed, threshold):
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng) for _ in range(10)]
    assert brute_ap(scenes, threshold) == {round(ap_p(scenes, threshold), 12)}


@given(st.integers(0, 10 ** 6))
def test_ap_with_tied_confidences_is_a_tie_consistent_value(seed):
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng, max_gt=2, max_extra=1, distinct=False) for _ in range(2)]
    assert round(ap_p(scenes, 0.5), 12) in brute_ap(scenes, 0.5)


def test_ap_vol_is_mean_of_nine_thresholds():
    rng = np.random.default_rng(3)
    scenes = [random_scene(rng) for _ in range(10)]
    assert ap_p_vol(scenes) == pytest.approx(np.mean([ap_p(scenes, t / 10) for t in range(1, 10)]))


@given(st.integers(0, 10 ** 6))
def test_ap_invariant_to_monotone_confidence_maps(seed):
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng) for _ in range(4)]
    moved = [SceneEval(s.preds, [np.exp(3 * c) - 7 for c in s.confidences], s.gts) for s in scenes]
    for t in (0.2, 0.5):
        assert ap_p(moved, t) == ap_p(scenes, t)


@given(st.integers(0, 10 ** 6))
def test_ap_non_increasing_in_threshold(seed):
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng) for _ in range(4)]
    vals = [ap_p(scenes, t) for t in VOL_THRESHOLDS]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_matching_is_injective_and_respects_threshold():
    rng = np.random.default_rng(4)
    for _ in range(30):
        s = random_scene(rng)
        m = match(s.preds, s.confidences, s.gts, 0.4)
        used = [g for g in m.pred_gt if g is not None]
        assert len(used) == len(set(used)) == sum(m.gt_matched)
        for i, g in enumerate(m.pred_gt):
            if g is not None:
                assert part_overlap(s.preds[i], s.gts[g]) >= 0.4


def test_pcp_count_rule():
    gt = np.zeros((1, 30), int)
    gt[0, :10], gt[0, 10:20], gt[0, 20:] = 1, 2, 3
    pred = np.zeros((1, 30), int)
    pred[0, :8], pred[0, 10:16], pred[0, 20:24] = 1, 2, 3     # IOUs 0.8, 0.6, 0.4
    assert pcp(SceneEval([pred], [1.0], [gt]), 0.5) == pytest.approx(2 / 3)
    assert pcp(SceneEval([], [], [gt, gt]), 0.5) == 0.0
    assert pcp(SceneEval([pred], [1.0], [gt, np.where(gt == 1, 1, 0)]), 0.5) == pytest.approx(1 / 3)


@given(st.integers(0, 10 ** 6), st.sampled_from([0.3, 0.5]))
def test_pcp_matches_loop_oracle(seed, threshold):
    rng = np.random.default_rng(seed)
    scenes = [random_scene(rng) for _ in range(10)]
    order_of = lambda s: list(np.argsort(-np.asarray(s.confidences)))
    got = pcp(scenes, threshold)
    assert got == pytest.approx(loop_pcp(scenes, threshold, order_of), abs=1e-12)
    assert 0.0 <= got <= 1.0


def test_pcp_one_iff_everything_parsed():
    rng = np.random.default_rng(5)
    s = random_scene(rng, max_extra=0)
    exact = SceneEval(list(s.gts), [0.5] * len(s.gts), s.gts)
    assert pcp(exact, 0.5) == 1.0
    missing = SceneEval(list(s.gts[1:]), [0.5] * (len(s.gts) - 1), s.gts)
    if len(s.gts) > 1:
        assert pcp(missing, 0.5) < 1.0


def test_box_closeness_examples():
    a = np.zeros((8, 8), bool)
    a[1:4, 1:4] = True
    b = np.zeros((8, 8), bool)
    b[1, 1] = b[3, 3] = True                   # same tight box as a
    assert average_box_iou([a, b]) == 1.0
    c = np.zeros((8, 8), bool)
    c[5:7, 5:8] = True
    assert average_box_iou([a, c]) == 0.0
    assert average_box_iou([a]) == 0.0
    assert box_iou((0, 0, 0, 0), (0, 0, 0, 0)) == 1.0
    assert box_iou((0, 0, 1, 1), (1, 1, 2, 2)) == pytest.approx(1 / 7)


def test_closeness_matches_loop_oracle_and_is_order_free():
    scenes = [generate_scene(SceneConfig(), seed=s) for s in range(20)]
    masks = [sc.person_masks for sc in scenes]
    got = mean_average_iou(scenes)
    assert got == pytest.approx(loop_closeness(masks), abs=1e-12)
    perm = np.random.default_rng(0).permutation(20)
    assert mean_average_iou([scenes[i] for i in perm]) == pytest.approx(got, abs=1e-15)


def test_person_parts_and_report():
    scene = generate_scene(SceneConfig(), seed=1)
    parts = person_parts(scene.person_masks, scene.part_labels)
    assert len(parts) == scene.person_count
    assert sum((p > 0).sum() for p in parts) == (scene.part_labels > 0).sum()
    s = SceneEval(parts, [1.0] * len(parts), parts)
    rep = evaluate([s], ["a"], thresholds=(0.5, 0.75), gt_masks=[scene.person_masks])
    assert rep.ap_p == {0.5: 1.0, 0.75: 1.0} and rep.pcp == 1.0
    assert rep.closeness == pytest.approx(mean_average_iou([scene]))
    d = rep.to_dict()
    assert d["ap_p"] == {"0.5": 1.0, "0.75": 1.0} and d["per_scene"][0]["scene"] == "a"
    table = rep.table()
    assert "AP^p_0.5" in table and "AP^p_vol" in table and "PCP_0.5" in table and "100.00" in table
