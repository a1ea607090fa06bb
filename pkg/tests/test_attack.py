import numpy as np
import pytest
from numpy.testing import assert_array_equal

from scratchattack.attack import (PRESETS, AttackConfig, AttackConfigError, AttackResult,
                                  pick_target, read_jsonl, run_attack, run_batch,
                                  source_target_analysis, write_jsonl)
from scratchattack.classifier import QueryLedger
from scratchattack.es import CMAConfig, DEConfig
from scratchattack.scratch import rasterize, Bezier
from scratchattack.toy import held_out_set


class Fixed:
    """Always returns the same probability vector; counts calls."""

    def __init__(self, probs):
        self.p = np.asarray(probs, float)
        self.calls = 0
        self.num_classes = len(probs)

    def probabilities(self, x):
        self.calls += 1
        return self.p


class Counting:
    def __init__(self, model):
        self.model, self.calls = model, 0
        self.num_classes = model.num_classes

    def probabilities(self, x):
        self.calls += 1
        return self.model.probabilities(x)


SMALL = AttackConfig(de=DEConfig(10, 5), budget=60)


def test_config_validation():
    with pytest.raises(AttackConfigError):
        AttackConfig(domain="image", optimizer="cma")
    with pytest.raises(AttackConfigError):
        AttackConfig(domain="image", location="fixed", optimizer="de")
    with pytest.raises(AttackConfigError):
        AttackConfig(budget=10, de=DEConfig(50))
    with pytest.raises(AttackConfigError):
        AttackConfig(shape="circle")
    for preset in PRESETS.values():
        assert preset.budget >= preset.population


def test_immediate_success():
    m = Fixed([0.1, 0.9])
    led = QueryLedger(60)
    res = run_attack(np.zeros((6, 6, 3)), SMALL, m, led, source=0, target=1)
    assert res.success and res.queries == 1 == led.used


def test_budget_equal_population_fails_at_budget():
    m = Fixed([0.9, 0.1])
    cfg = AttackConfig(de=DEConfig(10, 5), budget=10)
    led = QueryLedger(10)
    res = run_attack(np.zeros((6, 6, 3)), cfg, m, led, source=0, target=1)
    assert not res.success and res.queries == 10 == led.used == m.calls
    assert res.image.min() >= 0 and res.image.max() <= 1


def test_targeted_needs_target():
    with pytest.raises(AttackConfigError):
        run_attack(np.zeros((6, 6, 3)), SMALL, Fixed([0.9, 0.1]), source=0)


@pytest.fixture(scope="module")
def toy_images():
    return held_out_set()


def test_toy_attack_properties(toy_model, toy_images):
    x, y = toy_images
    cfg = AttackConfig(de=DEConfig(50, 50, 0.8, 0.7), budget=2500, seed=5)
    for i in range(4):
        m = Counting(toy_model)
        led = QueryLedger(cfg.budget)
        target = (int(y[i]) + 1) % 3
        res = run_attack(x[i], cfg, m, led, source=int(y[i]), target=target,
                         rng=np.random.default_rng(i))
        assert res.queries == led.used == m.calls <= cfg.budget
        assert res.image.min() >= 0 and res.image.max() <= 1
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        if res.success:
            assert toy_model.probabilities(res.image).argmax() == target
        outside = ~rasterize(Bezier(*np.reshape(res.params[:6], (3, 2)), res.params[6]), 16, 16)
        assert_array_equal(res.image[outside], x[i][outside])


def test_toy_attack_deterministic(toy_model, toy_images):
    x, y = toy_images
    cfg = AttackConfig(de=DEConfig(20, 10), budget=220)
    a = run_attack(x[0], cfg, toy_model, source=int(y[0]), target=(int(y[0]) + 2) % 3)
    b = run_attack(x[0], cfg, toy_model, source=int(y[0]), target=(int(y[0]) + 2) % 3)
    assert a.to_json() == b.to_json()


def test_untargeted_success_means_label_changed(toy_model, toy_images):
    x, y = toy_images
    cfg = AttackConfig(objective="untargeted", de=DEConfig(30, 30), budget=930)
    res = run_attack(x[1], cfg, toy_model, source=int(y[1]))
    assert res.target is None
    assert res.success
    assert toy_model.probabilities(res.image).argmax() != y[1]


def test_fixed_location_network_attack(toy_model, toy_images):
    x, y = toy_images
    cfg = AttackConfig(domain="network", location="fixed", optimizer="cma", shape="line",
                       scratches=2, cma=CMAConfig(40, 30), budget=1200, seed=1)
    res = run_attack(x[2], cfg, toy_model, source=int(y[2]), target=(int(y[2]) + 1) % 3)
    mask = np.zeros((16, 16), bool)
    mask[tuple(np.array(res.mask_pixels).T)] = True
    assert len(res.params) == 3 * mask.sum()
    assert_array_equal(res.image[~mask], x[2][~mask])
    assert res.coverage == pytest.approx(100 * mask.sum() / 256)
    assert res.success
    assert toy_model.probabilities(res.image).argmax() == (int(y[2]) + 1) % 3


def test_network_variable_location_allows_wide_colors(toy_model, toy_images):
    x, y = toy_images
    cfg = PRESETS["network-variable"]
    res = run_attack(x[3], cfg, toy_model, source=int(y[3]), target=(int(y[3]) + 1) % 3)
    assert res.success
    assert all(-10 <= c <= 10 for c in res.params[7:10])


class FakeCaptioner:
    """Caption confidence falls with the amount of red; no caption once it is high."""
    num_classes = None

    def caption(self, x):
        red = float(x[..., 0].mean() - x[..., 1:].mean())
        if red > 0.08:
            return None, None
        return ("a grey square" if red < 0.02 else "a red thing"), float(np.clip(0.87 - 5 * red, 0, 1))


def test_caption_attack():
    x = np.full((16, 16, 3), 0.5)
    cfg = PRESETS["caption"]
    led = QueryLedger(cfg.budget)
    res = run_attack(x, cfg, FakeCaptioner(), led)
    assert res.queries == led.used <= 2500
    assert res.success and res.caption != "a grey square"
    assert res.confidence is None or res.confidence < 0.87


def test_run_batch_zero_eligible():
    data = [(np.zeros((6, 6, 3)), 1), (np.ones((6, 6, 3)), 1)]
    rep = run_batch(data, [SMALL], Fixed([0.9, 0.1]))
    assert rep.eligible == 0
    assert rep.rows[0].attempts == 0 and rep.rows[0].success_rate is None


def test_run_batch_restarts(toy_model, toy_images):
    x, y = toy_images
    cfg = AttackConfig(domain="network", location="fixed", optimizer="cma", cma=CMAConfig(10, 3),
                       budget=30, restarts=10)
    rep = run_batch([(x[0], y[0])], [cfg], toy_model)
    assert len(rep.results) == 10
    assert rep.rows[0].attempts == 10
    assert len({tuple(map(tuple, r.mask_pixels)) for r in rep.results}) > 1
    assert len({r.target for r in rep.results}) == 1


def test_run_batch_two_configs_and_workers(toy_model, toy_images, tmp_path):
    x, y = toy_images
    data = list(zip(x[:6], y[:6]))
    cfgs = [AttackConfig(name="a", de=DEConfig(10, 5), budget=60),
            AttackConfig(name="b", shape="line", de=DEConfig(10, 5), budget=60)]
    rep = run_batch(data, cfgs, toy_model)
    assert [r.config for r in rep.rows] == ["a", "b"]
    rep4 = run_batch(data, cfgs, toy_model, workers=4)
    assert [r.to_json() for r in rep.results] == [r.to_json() for r in rep4.results]
    write_jsonl(rep.results, tmp_path / "r.jsonl")
    back = read_jsonl(tmp_path / "r.jsonl")
    assert [r.to_json() for r in back] == [r.to_json() for r in rep.results]


def test_pick_target_never_source():
    for seed in range(5):
        for i in range(50):
            for s in range(4):
                t = pick_target(seed, i, s, 4)
                assert t != s and 0 <= t < 4


def result(source, target, queries, success=True):
    return AttackResult(success, queries, 0.0, np.zeros((1, 1, 3)), [], [], source, target)


def test_source_target_single_and_empty():
    m = source_target_analysis([result(0, 1, 100)], 3)
    assert m.cells[0, 1] == 100
    assert np.isnan(m.cells).sum() == 8
    empty = source_target_analysis([result(0, 1, 100, success=False)], 3)
    assert np.all(np.isnan(empty.cells))
    assert np.all(np.isnan(empty.row_means)) and np.all(np.isnan(empty.col_means))


def test_source_target_matches_recount(toy_model, toy_images, tmp_path):
    x, y = toy_images
    rep = run_batch(list(zip(x[:30], y[:30])), [AttackConfig(de=DEConfig(20, 20), budget=420)],
                    toy_model)
    write_jsonl(rep.results, tmp_path / "log.jsonl")
    m = source_target_analysis(rep.results, 3)
    m.to_csv(tmp_path / "st.csv")
    rows = [r for r in read_jsonl(tmp_path / "log.jsonl") if r.success]
    for s in range(3):
        assert np.isnan(m.cells[s, s])
        for t in range(3):
            q = [r.queries for r in rows if r.source == s and r.target == t]
            if q:
                assert m.cells[s, t] == pytest.approx(np.mean(q))
        qs = [r.queries for r in rows if r.source == s]
        assert m.row_means[s] == pytest.approx(np.mean(qs))
