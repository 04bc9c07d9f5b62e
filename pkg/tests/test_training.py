"""Objective, optimizer, trainer loop, decoding, and the contamination
probe. Optimizer math is pinned by a hand-derived single-step closed form;
the trainer is pinned by bit-determinism and the 0-epoch identity.
"""

from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from gamsi.diagnostics import micro_model, micro_samples
from gamsi.errors import ConfigError, ContractError, NumericError
from gamsi.synth import ANSWER_CANDIDATES, build_dataset, mixture_for_stage
from gamsi.tensor import Parameter, Tensor
from gamsi.training import (
    CSV_HEADER,
    AdamW,
    LossReport,
    TrainConfig,
    batch_objective,
    contamination_metric,
    dataset_alignment,
    evaluate_qa,
    lm_loss,
    predict_answer,
    total_loss,
    train_stage,
)


def T64(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), dtype=np.float64, requires_grad=True)


def P64(name, data) -> Parameter:
    return Parameter(name, np.asarray(data, dtype=np.float64), dtype=np.float64)


# ---------------------------------------------------------------- lm loss


def test_lm_loss_uniform_logits_is_log_vocab():
    logits = T64(np.zeros((3, 7)))
    out = lm_loss(logits, [1, 2, 3])
    np.testing.assert_allclose(out.data, math.log(7), rtol=1e-12)


def test_lm_loss_matches_independent_mean_ce(rng):
    logits = rng.standard_normal((2, 5))
    tokens = [3, 0]
    want = 0.0
    for row, tok in zip(logits, tokens):
        want += math.log(np.exp(row - row.max()).sum()) + row.max() - row[tok]
    want /= 2
    out = lm_loss(T64(logits), tokens)
    np.testing.assert_allclose(out.data, want, rtol=1e-10)


def test_lm_loss_contract_errors():
    with pytest.raises(ContractError):
        lm_loss(T64(np.zeros((0, 5))), [])
    with pytest.raises(ContractError):
        lm_loss(T64(np.zeros((2, 5))), [1])


def test_total_loss_is_plain_sum():
    out = total_loss(T64(np.array(1.25)), T64(np.array(0.5)))
    np.testing.assert_allclose(out.data, 1.75, rtol=1e-12)
    with pytest.raises(NumericError):
        total_loss(T64(np.array(np.inf)), T64(np.array(0.0)))
    with pytest.raises(NumericError):
        total_loss(T64(np.array(0.0)), T64(np.array(np.nan)))


# ---------------------------------------------------------------- optimizer


def test_adamw_lr_zero_is_a_no_op():
    p = P64("w", [1.0, -2.0, 3.0])
    p.grad[:] = 1.0
    before = p.data.copy()
    opt = AdamW([p], lr=0.0, weight_decay=0.5)
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_adamw_single_step_closed_form():
    # Fresh moments, constant gradient g:
    #   m1 = (1-b1) g, v1 = (1-b2) g^2, mhat = g, vhat = g^2
    #   p' = p (1 - lr wd) - lr g / (|g| + eps)
    lr, wd, eps = 0.1, 0.04, 1e-8
    p = P64("w", [1.0, -2.0])
    g = np.array([0.5, -0.25])
    p.grad[:] = g
    opt = AdamW([p], lr=lr, weight_decay=wd, eps=eps)
    opt.step()
    want = np.array([1.0, -2.0]) * (1 - lr * wd) - lr * g / (np.abs(g) + eps)
    np.testing.assert_allclose(p.data, want, rtol=1e-12)
    # internal state matches the recurrences
    np.testing.assert_allclose(opt.m[0], 0.1 * g, rtol=1e-12)
    np.testing.assert_allclose(opt.v[0], 0.001 * g**2, rtol=1e-12)


def test_adamw_two_steps_match_hand_recurrence():
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    p = P64("w", [0.7])
    opt = AdamW([p], lr=lr, weight_decay=0.0, beta1=b1, beta2=b2, eps=eps)
    x, m, v = 0.7, 0.0, 0.0
    for t in (1, 2):
        g = 2.0 * x  # gradient of x^2 at the current point
        p.zero_grad()
        p.grad[:] = g
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**t), v / (1 - b2**t)
        x = x - lr * mh / (math.sqrt(vh) + eps)
        np.testing.assert_allclose(p.data[0], x, rtol=1e-12)


def test_adamw_decay_applies_even_without_gradient_signal():
    p = P64("w", [2.0])
    p.grad[:] = 0.0
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step()
    np.testing.assert_allclose(p.data, [2.0 * (1 - 0.05)], rtol=1e-12)


def test_adamw_validation():
    p = P64("w", [1.0])
    with pytest.raises(ConfigError):
        AdamW([p], lr=-0.1)
    with pytest.raises(ConfigError):
        AdamW([p], lr=0.1, beta1=1.0)


def test_train_config_validation():
    TrainConfig(stage=1)
    with pytest.raises(ConfigError):
        TrainConfig(stage=3)
    with pytest.raises(ConfigError):
        TrainConfig(stage=1, learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(stage=1, batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(stage=1, lam=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(stage=1, epochs=-1)


# ------------------------------------------------------------ batch objective


def test_batch_objective_components_satisfy_identity():
    model = micro_model(seed=3)
    batch = micro_samples(3, seed=4)
    loss, parts = batch_objective(model, batch, lam=0.01)
    np.testing.assert_allclose(float(loss.data), parts["total"], rtol=1e-12)
    np.testing.assert_allclose(parts["total"], parts["lm"] + parts["align"], rtol=1e-12)
    want_align = (
        parts["mse_m"] + 0.01 * parts["cl_m"] + parts["mse_s"] + 0.01 * parts["cl_s"]
    )
    np.testing.assert_allclose(parts["align"], want_align, rtol=1e-9)
    assert 0.0 <= parts["ans_acc"] <= 1.0


def test_batch_objective_is_deterministic():
    model = micro_model(seed=5)
    batch = micro_samples(2, seed=6)
    l1, _ = batch_objective(model, batch, lam=0.01)
    l2, _ = batch_objective(model, batch, lam=0.01)
    assert float(l1.data) == float(l2.data)


def test_batch_objective_baseline_variant_has_zero_alignment():
    model = micro_model(seed=7, use_metric=False, use_struct=False)
    batch = micro_samples(2, seed=8)
    loss, parts = batch_objective(model, batch, lam=0.01)
    assert parts["align"] == 0.0
    assert parts["mse_m"] == parts["cl_m"] == parts["mse_s"] == parts["cl_s"] == 0.0
    np.testing.assert_allclose(float(loss.data), parts["lm"], rtol=1e-12)


def test_batch_objective_joint_pool_increases_contrastive_terms():
    model = micro_model(seed=9)
    batch = micro_samples(2, seed=10)
    _, separate = batch_objective(model, batch, lam=0.01, joint_negative_pool=False)
    _, joint = batch_objective(model, batch, lam=0.01, joint_negative_pool=True)
    # widening the candidate pool can only add probability mass to the
    # denominator, so the contrastive losses must not shrink
    assert joint["cl_m"] >= separate["cl_m"] - 1e-12
    assert joint["cl_s"] >= separate["cl_s"] - 1e-12
    assert joint["mse_m"] == separate["mse_m"]  # regression term untouched


def test_batch_objective_requires_expert_targets():
    model = micro_model(seed=11)
    batch = micro_samples(1, seed=12)
    batch[0].experts.pop("metric")
    with pytest.raises(ConfigError):
        batch_objective(model, batch, lam=0.01)


# ----------------------------------------------------------------- trainer


def micro_dataset(count=6, seed=0):
    return micro_samples(count, seed=seed)


def test_train_stage_zero_epochs_keeps_parameters_bitwise():
    model = micro_model(seed=13)
    before = {n: p.data.copy() for n, p in model.named_parameters().items()}
    reports, opt = train_stage(
        model, TrainConfig(stage=1, epochs=0), micro_dataset(), csv_path=None
    )
    assert reports == []
    assert opt.t == 0
    for n, p in model.named_parameters().items():
        assert p.data.tobytes() == before[n].tobytes()


def test_train_stage_rejects_empty_dataset():
    with pytest.raises(ContractError):
        train_stage(micro_model(), TrainConfig(stage=1), [])


def test_train_stage_is_bit_deterministic():
    def run():
        model = micro_model(seed=14)
        reports, _ = train_stage(
            model,
            TrainConfig(stage=1, epochs=2, batch_size=2, seed=3),
            micro_dataset(4, seed=15),
        )
        return [r.total for r in reports], {
            n: p.data.tobytes() for n, p in model.named_parameters().items()
        }

    totals1, state1 = run()
    totals2, state2 = run()
    assert totals1 == totals2
    assert state1 == state2
    assert len(totals1) == 2 * 2  # 4 samples / batch 2 * 2 epochs


def test_train_stage_reduces_alignment_on_its_own_data():
    model = micro_model(seed=16)
    data = micro_dataset(4, seed=17)
    before = dataset_alignment(model, data, lam=0.01)
    train_stage(
        model,
        TrainConfig(stage=1, epochs=30, batch_size=4, learning_rate=3e-3, seed=1),
        data,
    )
    after = dataset_alignment(model, data, lam=0.01)
    assert after < before


def test_train_stage_csv_contract(tmp_path):
    path = tmp_path / "losses.csv"
    model = micro_model(seed=18)
    reports, opt = train_stage(
        model,
        TrainConfig(stage=1, epochs=1, batch_size=3, seed=0),
        micro_dataset(6, seed=19),
        csv_path=path,
    )
    # resume: stage 2 rows append under the same single header
    train_stage(
        model,
        TrainConfig(stage=2, epochs=1, batch_size=3, seed=0),
        micro_dataset(6, seed=20),
        csv_path=path,
        optimizer=opt,
        start_step=reports[-1].step,
    )
    rows = list(csv.reader(path.open()))
    assert rows[0] == CSV_HEADER
    body = rows[1:]
    assert len(body) == 4
    steps = [int(r[0]) for r in body]
    assert steps == [1, 2, 3, 4]  # contiguous across the stage boundary
    assert [r[1] for r in body] == ["1", "1", "2", "2"]
    for r in body:
        lm, align, tot = float(r[2]), float(r[7]), float(r[8])
        mse_m, cl_m, mse_s, cl_s = map(float, (r[3], r[4], r[5], r[6]))
        assert abs(tot - (lm + align)) <= 1e-6
        assert abs(align - (mse_m + 0.01 * cl_m + mse_s + 0.01 * cl_s)) <= 1e-6


def test_loss_report_row_formatting():
    rep = LossReport(
        step=3, stage=2, lm=0.123456789012, mse_m=1.0, cl_m=2.0,
        mse_s=3.0, cl_s=4.0, align=5.0, total=6.0, ans_acc=0.5,
    )
    row = rep.row()
    assert row[0] == 3 and row[1] == 2
    assert row[2] == "0.123456789"  # %.10g
    assert row[-1] == "0.5"


def test_train_stage_flags_non_finite_loss():
    model = micro_model(seed=21)
    model.backbone.unembed.data[:] = np.nan  # poison the answer logits
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError, match="non-finite"):
            train_stage(
                model,
                TrainConfig(stage=1, epochs=1, batch_size=2),
                micro_dataset(2, seed=22),
            )


# ------------------------------------------------------------- decode/eval


def real_dataset(count=10, seed=100):
    return build_dataset(count, base_seed=seed, mixture=mixture_for_stage(2), k_v=2, d_e=3)


def make_qa_model(seed=0):
    # vocab must cover the real token space (33)
    return micro_model(seed=seed, vocab=33, max_t=40)


def test_predict_answer_stays_within_candidates():
    model = make_qa_model()
    for sample in real_dataset(10):
        got = predict_answer(model, sample.qa)
        assert len(got) == 1
        assert got[0] in ANSWER_CANDIDATES[sample.qa.task_type]


def test_predict_answer_placeholder_value_is_irrelevant():
    # The decode reads the logits row at the placeholder position; causality
    # means the placeholder token's own embedding cannot influence that row.
    model = make_qa_model(seed=1)
    sample = real_dataset(1)[0].qa
    out_pad = model.forward(sample.scene.frames, sample.question, [0])
    out_other = model.forward(sample.scene.frames, sample.question, [17])
    np.testing.assert_array_equal(
        out_pad.answer_logits.data[-1], out_other.answer_logits.data[-1]
    )


def test_evaluate_qa_shape_and_macro():
    model = make_qa_model(seed=2)
    data = real_dataset(15, seed=200)
    result = evaluate_qa(model, data)
    assert result["count"] == 15
    assert set(result["per_task"]) <= set(ANSWER_CANDIDATES)
    np.testing.assert_allclose(
        result["macro"], np.mean(list(result["per_task"].values())), rtol=1e-12
    )
    for v in result["per_task"].values():
        assert 0.0 <= v <= 1.0


def test_untrained_model_is_near_chance_on_two_way_task():
    # Constrained decoding over {closer, farther} cannot dodge the task:
    # an untrained model's accuracy must land near 1/2, not at 0 or 1.
    data = [
        s
        for s in build_dataset(
            60, base_seed=300, mixture={"relative-distance": 1.0}, k_v=2, d_e=3
        )
    ]
    accs = []
    for seed in range(3):
        model = make_qa_model(seed=seed + 40)
        res = evaluate_qa(model, data)
        accs.append(res["per_task"]["relative-distance"])
    mean_acc = float(np.mean(accs))
    assert 0.15 <= mean_acc <= 0.85


# ------------------------------------------------------------ contamination


def test_contamination_zero_with_mask_positive_without():
    data = real_dataset(4, seed=400)
    masked = make_qa_model(seed=3)
    assert contamination_metric(masked, data, seed=0, scale=1.0) == 0.0

    unmasked = micro_model(seed=3, vocab=33, max_t=40, use_mask=False)
    assert contamination_metric(unmasked, data, seed=0, scale=1.0) > 0.0


def test_contamination_requires_both_banks():
    model = micro_model(seed=4, vocab=33, max_t=40, use_metric=False)
    with pytest.raises(ContractError):
        contamination_metric(model, real_dataset(1))


def test_contamination_restores_the_bank():
    model = make_qa_model(seed=5)
    before = model.bank.metric.data.copy()
    contamination_metric(model, real_dataset(2, seed=500), seed=1, scale=2.0)
    np.testing.assert_array_equal(model.bank.metric.data, before)
