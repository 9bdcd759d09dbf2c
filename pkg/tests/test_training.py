import numpy as np
import pytest
from conftest import OracleScore, ZeroScore, randomize_params

from edpgnn.graphs import (
    GraphInstance,
    NoiseSchedule,
    Permutation,
    er_graph,
    permute,
    perturb_matrix,
)
from edpgnn.model import EdpGnn, ModelConfig
from edpgnn.training import (
    TrainConfig,
    dsm_loss,
    dsm_loss_given,
    split_validation,
    train,
    validate,
    write_loss_csv,
)

SMALL = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4, levels=6)


def fixed_graph(n=6, seed=0):
    return er_graph(n, 0.5, np.random.default_rng(seed))


# --- loss values -------------------------------------------------------------


def test_oracle_score_gives_zero_loss():
    g = fixed_graph()
    schedule = NoiseSchedule()
    oracle = OracleScore(g.adj, schedule)
    rng = np.random.default_rng(1)
    breakdown = dsm_loss(oracle, [g], schedule, rng)
    assert breakdown.total < 1e-20
    assert all(t < 1e-20 for t in breakdown.terms)


def test_zero_network_term_expectation():
    # with s == 0 each upper-triangle entry contributes E[(resid)^2] = 1/sigma^2
    g = fixed_graph(n=8)
    schedule = NoiseSchedule((1.0, 0.5))
    rng = np.random.default_rng(2)
    totals = np.zeros(2)
    reps = 400
    for _ in range(reps):
        b = dsm_loss(ZeroScore(), [g], schedule, rng)
        totals += b.terms
    means = totals / reps
    n_pairs = 8 * 7 / 2
    assert means[0] == pytest.approx(n_pairs / 1.0**2, rel=0.05)
    assert means[1] == pytest.approx(n_pairs / 0.5**2, rel=0.05)


def test_total_is_weighted_term_combination():
    g = fixed_graph()
    schedule = NoiseSchedule()
    rng = np.random.default_rng(3)
    model = randomize_params(EdpGnn(SMALL, seed=0), np.random.default_rng(0))
    b = dsm_loss(model, [g], schedule, rng)
    L = schedule.levels
    expected = sum(s**2 * t / (2 * L) for s, t in zip(schedule.sigmas, b.terms))
    assert b.total == pytest.approx(expected, rel=1e-12)
    assert b.total >= 0.0
    assert all(t >= 0.0 for t in b.terms)


def test_doubling_levels_halves_weights():
    # per-level weight is sigma_i^2 / (2L): same term at L=1 carries weight
    # 1/2, at L=2 weight 1/4
    g = fixed_graph()
    rng = np.random.default_rng(4)
    noisy = perturb_matrix(g.adj, 1.0, rng)
    resid_sq = (np.triu(noisy - g.adj, 1) ** 2).sum()

    one, _ = dsm_loss_given(ZeroScore(), g, [noisy], NoiseSchedule((1.0,)))
    assert one.item() == pytest.approx(resid_sq / 2, rel=1e-12)

    two, _ = dsm_loss_given(ZeroScore(), g, [noisy, noisy], NoiseSchedule((1.0, 0.5)))
    t1 = resid_sq            # sigma = 1.0 level
    t2 = resid_sq / 0.5**4   # sigma = 0.5 level: residual scales as 1/sigma^2
    assert two.item() == pytest.approx((1.0**2 * t1 + 0.5**2 * t2) / 4, rel=1e-12)


def test_loss_permutation_invariant_with_transported_noise():
    g = fixed_graph(n=7, seed=5)
    schedule = NoiseSchedule((0.8, 0.4))
    rng = np.random.default_rng(6)
    noisy = [perturb_matrix(g.adj, s, rng) for s in schedule.sigmas]
    model = randomize_params(EdpGnn(
        ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4, levels=2),
        seed=1,
    ), np.random.default_rng(2))
    pi = Permutation.random(7, np.random.default_rng(7))
    direct, _ = dsm_loss_given(model, g, noisy, schedule)
    transported, _ = dsm_loss_given(
        model, permute(g, pi), [pi.apply_matrix(m) for m in noisy], schedule
    )
    assert abs(direct.item() - transported.item()) < 1e-8


def test_loss_rejects_empty_batch():
    with pytest.raises(ValueError, match="nonempty"):
        dsm_loss(ZeroScore(), [], NoiseSchedule(), np.random.default_rng(0))


# --- validate ----------------------------------------------------------------


def test_validate_fixed_stream_is_repeatable():
    g = fixed_graph()
    model = EdpGnn(SMALL, seed=3)
    schedule = NoiseSchedule()
    a = validate(model, [g], schedule)
    b = validate(model, [g], schedule)
    assert a.total == b.total
    assert a.terms == b.terms


def test_validate_oracle_is_zero():
    g = fixed_graph()
    schedule = NoiseSchedule()
    assert validate(OracleScore(g.adj, schedule), [g], schedule).total < 1e-20


def test_validate_matches_train_loss_on_same_stream():
    g = fixed_graph()
    model = EdpGnn(SMALL, seed=4)
    schedule = NoiseSchedule()
    v = validate(model, [g], schedule, stream_seed=99)
    t = dsm_loss(model, [g], schedule, np.random.default_rng(99))
    assert v.total == t.total


# --- split -------------------------------------------------------------------


def test_split_validation_sizes():
    rng = np.random.default_rng(0)
    data = [er_graph(6, 0.5, rng) for _ in range(40)]
    fit, val = split_validation(data, 32, seed=1)
    assert len(fit) == 8 and len(val) == 32
    with pytest.raises(ValueError, match="smaller"):
        split_validation(data, 40, seed=1)
    fit2, val2 = split_validation(data, 0, seed=1)
    assert len(fit2) == 40 and val2 == []


# --- train -------------------------------------------------------------------


def test_zero_steps_leaves_params_unchanged():
    model = EdpGnn(SMALL, seed=5)
    before = model.state_dict()
    cfg = TrainConfig(steps=0, val_size=0)
    result = train(model, [fixed_graph()], cfg, NoiseSchedule())
    assert result.curves == []
    for name, t in model.named_params():
        assert np.array_equal(t.data, before[name])


def test_training_is_deterministic():
    schedule = NoiseSchedule((0.8, 0.4))
    cfg = TrainConfig(lr=1e-3, batch_size=2, steps=8, seed=7, val_size=0)
    g = fixed_graph()

    def run():
        model = EdpGnn(SMALL, seed=11)
        result = train(model, [g, fixed_graph(seed=1)], cfg, schedule)
        return result, model.state_dict()

    r1, s1 = run()
    r2, s2 = run()
    assert [(c.step, c.total, c.terms) for c in r1.curves] == [
        (c.step, c.total, c.terms) for c in r2.curves
    ]
    for name in s1:
        assert np.array_equal(s1[name], s2[name])


def test_training_smoke_halves_loss():
    # bring-up oracle: 500 steps on one fixed 6-node graph
    g = fixed_graph()
    schedule = NoiseSchedule()
    model = EdpGnn(SMALL, seed=13)
    cfg = TrainConfig(lr=3e-3, batch_size=1, steps=500, seed=3, val_size=0)
    result = train(model, [g], cfg, schedule)
    first = result.curves[0].total
    last_avg = np.mean([c.total for c in result.curves[-20:]])
    assert last_avg <= 0.5 * first


def test_train_groups_batches_by_size():
    rng = np.random.default_rng(1)
    data = [er_graph(6, 0.5, rng) for _ in range(3)] + [er_graph(9, 0.5, rng) for _ in range(3)]
    model = EdpGnn(SMALL, seed=1)
    cfg = TrainConfig(steps=4, batch_size=3, seed=0, val_size=0)
    result = train(model, data, cfg, NoiseSchedule((0.5,)))
    assert len(result.curves) == 4  # ran without shape errors across sizes


def test_non_finite_loss_aborts_with_step():
    model = EdpGnn(SMALL, seed=2)
    for _, t in model.named_params():
        t.data[...] = np.nan
        break
    cfg = TrainConfig(steps=3, batch_size=1, seed=0, val_size=0)
    with pytest.raises(RuntimeError, match="step 1"):
        train(model, [fixed_graph()], cfg, NoiseSchedule((0.5,)))


def test_best_validation_params_returned():
    rng = np.random.default_rng(2)
    data = [er_graph(6, 0.5, rng) for _ in range(8)]
    model = EdpGnn(SMALL, seed=3)
    cfg = TrainConfig(lr=5e-3, batch_size=2, steps=30, seed=5, val_size=4,
                      checkpoint_every=10)
    result = train(model, data, cfg, NoiseSchedule((0.8, 0.4)))
    assert result.best_step > 0
    # reported best equals a fresh validation of the returned parameters
    _, val_set = split_validation(data, 4, seed=cfg.seed)
    val_rows = [c for c in result.curves if c.split == "val"]
    assert min(c.total for c in val_rows) == pytest.approx(result.best_val)


def test_loss_csv_layout(tmp_path):
    from edpgnn.training import CurveRow

    rows = [CurveRow(1, "train", 2.0, [1.0, 3.0]), CurveRow(1, "val", 2.5, [1.5, 3.5])]
    path = tmp_path / "curves.csv"
    write_loss_csv(rows, 2, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,total,term_1,term_2,split"
    assert lines[1].startswith("1,2") and lines[1].endswith("train")
