"""Sanity checks on the brute-force oracles against hand-worked values."""

import oracles


def test_ari_hand_value():
    # pairs over [0,0,1,1] vs [0,0,0,1]: n11=1, n10=1, n01=2, n00=2
    assert oracles.ari_pairs([0, 0, 1, 1], [0, 0, 0, 1]) == 2 * (2 * 1 - 2 * 1) / ((2 + 2) * (2 + 1) + (2 + 1) * (1 + 1))
    assert oracles.ari_pairs([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0


def test_auc_hand_values():
    items = [("a", 0.9, True), ("b", 0.8, False), ("c", 0.7, True)]
    assert oracles.auc_roc_pairs(items) == 0.5
    assert oracles.auc_pr_steps([(str(i), 10 - i, i == 9) for i in range(10)]) == 0.1
    # attacks ranked 1 and 3 of 4: steps at recall 1/2 (precision 1) and 1 (precision 2/3)
    items = [("a", 4, True), ("b", 3, False), ("c", 2, True), ("d", 1, False)]
    assert abs(oracles.auc_pr_steps(items) - (0.5 * 1 + 0.5 * 2 / 3)) < 1e-12


def test_adp_hand_value():
    items = [("a", 5, "A1"), ("b", 4, None), ("c", 3, None), ("d", 2, "A2"), ("e", 1, None)]
    assert oracles.adp_scan(items) == 0.75


def test_gfp_three_points():
    import math
    pts = [[math.cos(math.radians(a)), math.sin(math.radians(a))] for a in (0, 5, 90)]
    assert oracles.gfp_greedy(pts, 2) == [2, 0]
