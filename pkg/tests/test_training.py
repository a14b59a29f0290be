import csv
import io
import math

import numpy as np
import pytest

from conftest import read_csv_body
from projsdpa.data import EncodedSplit, build_vocabs, make_copy_task
from projsdpa.model import DataError, ModelConfig, TransformerParams
from projsdpa.numerics import Parameter, finite_difference_grad, relative_error
from projsdpa.training import (
    METRICS_HEADER,
    AdamState,
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    effective_rank_probe,
    evaluate,
    token_accuracy,
    train,
)

# --- loss ---------------------------------------------------------------------


def test_ce_uniform_logits_is_log_v():
    loss, _ = cross_entropy_loss(np.zeros((2, 3, 17)), np.full((2, 3), 5))
    assert abs(loss - math.log(17)) < 1e-12


def test_ce_one_hot_limit():
    logits = np.zeros((1, 4, 6))
    targets = np.array([[1, 2, 3, 4]])
    for big, bound in [(10.0, 1e-3), (40.0, 1e-15)]:
        logits[0, np.arange(4), targets[0]] = big
        assert cross_entropy_loss(logits, targets)[0] < bound


def test_ce_gradient_fd():
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((3, 5, 7))
    targets = rng.integers(1, 7, (3, 5))
    targets[0, 3:] = 0
    targets[2] = 0
    _, grad = cross_entropy_loss(logits, targets)
    num = finite_difference_grad(lambda z: cross_entropy_loss(z, targets)[0], logits)
    assert relative_error(grad, num) < 1e-4
    assert np.all(grad[2] == 0)


def test_ce_pad_positions_ignored():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((1, 4, 5))
    targets = np.array([[2, 3, 0, 0]])
    a, _ = cross_entropy_loss(logits, targets)
    logits[0, 2:] += 100 * rng.standard_normal((2, 5))
    assert cross_entropy_loss(logits, targets)[0] == a


def test_ce_errors():
    with pytest.raises(DataError):
        cross_entropy_loss(np.zeros((2, 3, 5)), np.zeros((2, 3), int))
    with pytest.raises(DataError):
        cross_entropy_loss(np.zeros((1, 2, 5)), np.array([[1, 5]]))
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((1, 2, 5)), np.array([[1, 2, 3]]))


# --- accuracy -----------------------------------------------------------------


def test_accuracy_perfect_and_pad_rows():
    targets = np.array([[4, 5, 0], [0, 0, 0]])
    logits = np.zeros((2, 3, 8))
    logits[0, 0, 4] = logits[0, 1, 5] = 1
    assert token_accuracy(logits, targets) == 1.0
    logits[0, 1] = 0
    logits[0, 1, 6] = 1
    assert token_accuracy(logits, targets) == 0.5


def test_accuracy_all_pad_warns():
    with pytest.warns(RuntimeWarning):
        assert token_accuracy(np.zeros((1, 2, 3)), np.zeros((1, 2), int)) == 0.0


def test_accuracy_random_logits_near_chance():
    rng = np.random.default_rng(2)
    n, v = 10_000, 20
    acc = token_accuracy(rng.standard_normal((n, v)), rng.integers(1, v, n), pad_id=0)
    p = 1 / (v - 1)  # targets never hit the pad id, so chance is over the other 19
    sd = math.sqrt(p * (1 - p) / n)
    assert abs(acc - p) < 3 * sd
    assert abs(acc - 1 / 20) < 3 * math.sqrt(0.05 * 0.95 / n) + abs(p - 0.05)


# --- Adam ---------------------------------------------------------------------


def test_adam_zero_grad_is_noop():
    p = Parameter(np.arange(6.0).reshape(2, 3))
    before = p.value.copy()
    state = AdamState.zeros_like([p])
    for _ in range(3):
        adam_step([p], state, lr=0.1)
    np.testing.assert_array_equal(p.value, before)
    assert state.t == 3


def test_adam_constant_grad_step_magnitude_is_lr():
    p = Parameter(np.zeros(3))
    p.grad = np.array([2.0, -0.5, 1e-3])
    state = AdamState.zeros_like([p])
    prev = p.value.copy()
    for _ in range(50):
        prev = p.value.copy()
        adam_step([p], state, lr=0.01, eps=1e-12)
    np.testing.assert_allclose(p.value - prev, -0.01 * np.sign(p.grad), rtol=1e-6)


def _scalar_adam(xs, gs, lr, b1, b2, eps):
    out = []
    for x0, g_seq in zip(xs, gs):
        x, m, v = x0, 0.0, 0.0
        for t, g in enumerate(g_seq, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(x)
    return out


def test_adam_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(5)
    grads = rng.standard_normal((100, 5))
    p = Parameter(x0.copy())
    state = AdamState.zeros_like([p])
    for g in grads:
        p.grad = g.copy()
        adam_step([p], state, lr=0.02, beta1=0.8, beta2=0.99, eps=1e-7)
    ref = _scalar_adam(x0, grads.T, 0.02, 0.8, 0.99, 1e-7)
    assert np.max(np.abs(p.value - ref)) < 1e-12


def test_adam_shape_mismatch():
    p = Parameter(np.zeros(3))
    state = AdamState.zeros_like([p])
    p.grad = np.zeros(4)
    with pytest.raises(ValueError):
        adam_step([p], state)
    with pytest.raises(ValueError):
        adam_step([p, p], state)


# --- training loop ------------------------------------------------------------


def _setup(variant, n=32, sigma2=2.0, seed=5):
    pairs = make_copy_task(12, 6, n, seed=seed, min_len=3)
    sv, tv = build_vocabs(pairs, 20)
    cfg = ModelConfig(d_model=32, num_heads=4, num_encoder_layers=1, num_decoder_layers=1, ff_dim=64,
                      src_vocab=len(sv), tgt_vocab=len(tv), max_len=8, variant=variant,
                      sigma2_self=sigma2, sigma2_cross=sigma2, seed=0)
    return cfg, EncodedSplit.from_pairs(pairs, sv, tv, 8)


@pytest.mark.parametrize("variant", ["standard", "projection"])
def test_overfits_memorization_set(variant):
    cfg, data = _setup(variant)
    recs = train(TransformerParams.init(cfg), cfg, data, None,
                 TrainConfig(epochs=200, batch_size=8, lr=3e-3, seed=0, record_timing=False))
    assert min(r.loss for r in recs) < 0.1


def test_metrics_csv_rows_and_determinism(tmp_path):
    cfg, data = _setup("projection", n=40)
    val, test = EncodedSplit(data.src[:8], data.tgt_in[:8], data.tgt_out[:8]), EncodedSplit(data.src[8:16], data.tgt_in[8:16], data.tgt_out[8:16])
    texts = []
    for i in range(2):
        path = tmp_path / f"m{i}.csv"
        tc = TrainConfig(epochs=3, batch_size=8, seed=4, metrics_path=str(path), record_timing=False)
        train(TransformerParams.init(cfg), cfg, data, val, tc, test_data=test)
        texts.append(path.read_bytes())
    assert texts[0] == texts[1]
    rows = list(csv.reader(io.StringIO("\n".join(read_csv_body(texts[0].decode()))), strict=True))
    assert tuple(rows[0]) == METRICS_HEADER
    assert len(rows) - 1 == 3 * 3
    assert {r[1] for r in rows[1:]} == {"train", "val", "test"}
    assert all(float(r[4]) == 0.0 for r in rows[1:])


def test_timing_on_changes_only_seconds(tmp_path):
    cfg, data = _setup("standard", n=16)
    runs = []
    for _ in range(2):
        recs = train(TransformerParams.init(cfg), cfg, data, data, TrainConfig(epochs=2, batch_size=8, seed=1))
        runs.append(recs)
    assert [r.row()[:4] for r in runs[0]] == [r.row()[:4] for r in runs[1]]
    assert all(r.seconds > 0 for r in runs[0])
    secs = [r.seconds for r in runs[0] if r.split == "train"]
    assert secs == sorted(secs)


def test_max_steps_stops_early():
    cfg, data = _setup("standard", n=32)
    recs = train(TransformerParams.init(cfg), cfg, data, None, TrainConfig(epochs=5, batch_size=8, max_steps=2))
    assert len(recs) == 1


def test_empty_train_split_raises():
    cfg, data = _setup("standard", n=4)
    empty = EncodedSplit(data.src[:0], data.tgt_in[:0], data.tgt_out[:0])
    with pytest.raises(DataError):
        train(TransformerParams.init(cfg), cfg, empty, None, TrainConfig(epochs=1))


def test_evaluation_batch_order_and_workers_invariant():
    cfg, data = _setup("projection", n=50)
    params = TransformerParams.init(cfg)
    ref = evaluate(params, cfg, data, batch_size=50)
    perm = np.random.default_rng(0).permutation(50)
    shuffled = EncodedSplit(data.src[perm], data.tgt_in[perm], data.tgt_out[perm])
    for split, bs, workers in [(data, 7, 1), (shuffled, 7, 1), (shuffled, 4, 3)]:
        loss, acc = evaluate(params, cfg, split, batch_size=bs, workers=workers)
        assert abs(loss - ref[0]) < 1e-9 and abs(acc - ref[1]) < 1e-12
    assert evaluate(params, cfg, data, 4, workers=1) == evaluate(params, cfg, data, 4, workers=4)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(split=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_steps=0)


# --- effective rank -----------------------------------------------------------


def test_effective_rank_identical_rows():
    assert effective_rank_probe(np.tile([1.0, 2.0, 3.0], (5, 1))) == 1.0


def test_effective_rank_orthogonal_rows():
    # centered I_4 has singular values (1, 1, 1, 0)
    assert abs(effective_rank_probe(np.eye(4) * 2.5) - 3.0) < 1e-9


def test_effective_rank_rotation_invariant():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((10, 6))
    rot, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    assert abs(effective_rank_probe(x) - effective_rank_probe(x @ rot)) < 1e-9
    assert 1.0 < effective_rank_probe(x) <= 6.0


def test_effective_rank_shape_errors():
    with pytest.raises(ValueError):
        effective_rank_probe(np.ones((1, 3)))
    with pytest.raises(ValueError):
        effective_rank_probe(np.ones(3))
