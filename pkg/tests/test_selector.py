import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgevfm.embedding_engine import EmbeddingBank
from edgevfm.exceptions import ValidationError
from edgevfm.selector import (
    AccuracyProfile,
    CostCache,
    SelectionRequest,
    metric_value,
    nearest_scene,
    select_subnet,
    sweep_alpha,
)

import oracles

ALPHAS = (0.8, 0.85, 0.88, 0.9, 0.92, 0.94, 0.96, 0.98, 1.0)
HAND = {"Min": 0.70, "Tiny": 0.74, "Small": 0.76, "Base": 0.77, "Large": 0.78}


def hand_profile(reps, values=HAND, scene="kitchen"):
    return AccuracyProfile({(scene, reps[n].id): a for n, a in values.items()})


@pytest.mark.parametrize("alpha, expected", [(1.0, "Large"), (0.89, "Min"), (0.9, "Tiny")])
def test_hand_examples(reps, alpha, expected):
    res = select_subnet(hand_profile(reps), SelectionRequest("kitchen", alpha))
    assert res.chosen == reps[expected]
    assert res.threshold == pytest.approx(alpha * 0.78)


def test_flat_profile_picks_min(reps):
    flat = hand_profile(reps, {n: 0.5 for n in HAND})
    for alpha in ALPHAS:
        assert select_subnet(flat, SelectionRequest("kitchen", alpha)).chosen == reps["Min"]


def test_alpha_bounds():
    with pytest.raises(ValidationError):
        SelectionRequest("kitchen", 1.01)
    with pytest.raises(ValidationError):
        SelectionRequest("kitchen", 0.0)
    with pytest.raises(ValidationError):
        SelectionRequest("kitchen", 0.9, cost_metric="watts")


def test_missing_entry_named(reps):
    values = dict(HAND)
    del values["Base"]
    with pytest.raises(ValidationError, match=reps["Base"].id):
        select_subnet(hand_profile(reps, values), SelectionRequest("kitchen", 0.9))


def test_metric_without_calibration(reps):
    with pytest.raises(ValidationError):
        select_subnet(hand_profile(reps), SelectionRequest("kitchen", 0.9, "latency"))


def test_tie_breaks_on_params_then_id(reps, space):
    class Flat:
        def __init__(self):
            self.inner = CostCache(space)

        def __call__(self, c):
            r = self.inner(c)
            return r.__class__(r.subnet_id, r.params, 1, r.resolution, r.latency_ms, r.energy_mj)

    flat = hand_profile(reps, {n: 0.5 for n in HAND})
    assert select_subnet(flat, SelectionRequest("kitchen", 0.9), Flat()).chosen == reps["Min"]


@pytest.mark.parametrize("metric", ["flops", "params", "latency", "energy"])
def test_matches_brute_force_on_grid(profile12, reps, space, calibration, metric):
    costs = CostCache(space, calibration)
    cands = list(reps.values())
    for scene in profile12.scenes:
        accs = [profile12.accuracy(scene, c.id) for c in cands]
        cs = [metric_value(costs(c), metric) for c in cands]
        ps = [costs(c).params for c in cands]
        for alpha in ALPHAS:
            got = select_subnet(profile12, SelectionRequest(scene, alpha, metric), costs).chosen.id
            assert got == oracles.brute_force_select(accs, cs, ps, [c.id for c in cands], alpha)


def test_monotone_in_alpha(profile12, space, calibration):
    costs = CostCache(space, calibration)
    for scene in profile12.scenes:
        results = [select_subnet(profile12, SelectionRequest(scene, a), costs) for a in ALPHAS]
        assert all(a.cost <= b.cost for a, b in zip(results, results[1:]))
        assert all(a.achieved_accuracy <= b.achieved_accuracy for a, b in zip(results, results[1:]))


def test_rescaling_keeps_choice(profile12):
    costs = CostCache()
    for scene in profile12.scenes:
        for factor in (0.5, 0.9, 1.0 / max(profile12.accuracy(scene, m) for m in profile12.subnet_ids(scene))):
            scaled = profile12.scaled(scene, factor)
            for alpha in ALPHAS:
                req = SelectionRequest(scene, alpha)
                assert select_subnet(scaled, req, costs).chosen == select_subnet(profile12, req, costs).chosen


def test_sweep_all_large_at_one(profile12, reps):
    table = sweep_alpha(profile12, None, ALPHAS)
    assert table.row(1.0)[reps["Large"].id] == 1.0
    large = [r[table.subnet_ids.index(reps["Large"].id)] for r in table.fractions]
    assert large == sorted(large)
    for r in table.fractions:
        assert sum(r) == pytest.approx(1.0)


def test_sweep_matches_per_scene(profile12):
    table = sweep_alpha(profile12, None, (0.9, 0.95, 0.98))
    for alpha, row in zip(table.alphas, table.fractions):
        chosen = [select_subnet(profile12, SelectionRequest(s, alpha)).chosen.id for s in profile12.scenes]
        expected = [chosen.count(i) / len(chosen) for i in table.subnet_ids]
        assert list(row) == expected


def test_sweep_single_scene_one_hot(reps):
    table = sweep_alpha(hand_profile(reps), None, ALPHAS)
    for row in table.fractions:
        assert sorted(row) == [0, 0, 0, 0, 1.0]


def test_sweep_csv(profile12):
    text = sweep_alpha(profile12, None, (0.9, 1.0)).to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["alpha", "Min", "Tiny", "Small", "Base", "Large"]
    assert len(rows) == 3


def test_percent_rows_detected(reps):
    prof = AccuracyProfile.from_rows([("s", reps["Min"].id, 70.0), ("s", reps["Large"].id, 80.0)])
    assert prof.accuracy("s", reps["Min"].id) == pytest.approx(0.7)


def test_nearest_scene():
    rng = np.random.default_rng(3)
    bank = EmbeddingBank(("kitchen", "street", "office", "park", "beach"), rng.normal(size=(5, 8)))
    assert nearest_scene("Kitchen", bank) == "kitchen"
    assert nearest_scene(bank.vectors[3] * 2, bank) == "park"
    for _ in range(10):
        q = rng.normal(size=8)
        sims = [float(q @ v / np.linalg.norm(q) / np.linalg.norm(v)) for v in bank.vectors.astype(float)]
        assert nearest_scene(q, bank) == bank.labels[int(np.argmax(sims))]
    with pytest.raises(ValidationError):
        nearest_scene("moon base", bank)
    assert nearest_scene("moon base", bank, embed=lambda s: bank.vectors[1]) == "street"


def test_unknown_scene_via_bank(profile12, reps):
    bank = EmbeddingBank(("kitchen", "street"), [[1.0, 0.0], [0.0, 1.0]])
    res = select_subnet(profile12, SelectionRequest("galley", 0.95), scene_bank=bank, embed=lambda s: np.array([1.0, 0.1]))
    assert res.matched_scene == "kitchen"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5), st.floats(0.05, 1.0))
def test_selection_property(accs, alpha):
    from edgevfm.search_space import representative_subnets

    reps = representative_subnets()
    prof = AccuracyProfile({("s", c.id): a for c, a in zip(reps.values(), accs)})
    res = select_subnet(prof, SelectionRequest("s", alpha))
    assert res.achieved_accuracy >= alpha * max(accs)
    costs = CostCache()
    for c, a in zip(reps.values(), accs):
        if a >= alpha * max(accs):
            assert costs(c).flops >= res.cost
