import json

import numpy as np
import pytest
import torch

import hierprompt.prompthead as ph
from hierprompt.hierarchy import LabelSpace
from hierprompt.prompthead import (
    CheckpointError,
    LevelScores,
    count_trainable_params,
    forward,
    forward_features,
    init_prompts,
    load_prompt_state,
    param_count,
    save_prompt_state,
    threshold,
)
from toy import synthetic_setup, tiny_instance


@pytest.mark.parametrize(
    "n, m, d_tok, expected",
    [(353, 16, 512, 5_783_552), (138, 16, 512, 2_260_992), (13, 16, 512, 212_992), (1, 1, 1, 2)],
)
def test_param_count(n, m, d_tok, expected):
    space = LabelSpace.from_labels(1, [f"c{i}" for i in range(n)])
    ps = init_prompts(space, m, m, d_tok)
    assert count_trainable_params(ps) == param_count(n, m, m, d_tok) == expected


def test_param_count_unequal_contexts():
    space = LabelSpace.from_labels(1, ["a", "b"])
    assert count_trainable_params(init_prompts(space, 3, 5, 7)) == 2 * 8 * 7


def test_init_deterministic_and_seed_sensitive():
    space = LabelSpace.from_labels(2, ["x", "y", "z"])
    a, b = init_prompts(space, d_tok=8, seed=1), init_prompts(space, d_tok=8, seed=1)
    c = init_prompts(space, d_tok=8, seed=2)
    assert torch.equal(a.pos_ctx, b.pos_ctx) and torch.equal(a.neg_ctx, b.neg_ctx)
    assert not torch.equal(a.pos_ctx, c.pos_ctx)
    assert a.pos_ctx.dtype == torch.float64 and a.pos_ctx.requires_grad


def test_init_rejects_empty_context():
    with pytest.raises(ValueError):
        init_prompts(LabelSpace.from_labels(1, ["a"]), 0, 4, 8)


def test_hand_computed_attention(monkeypatch):
    _, _, b, ps = tiny_instance(scale=1.0)
    t_pos = torch.tensor([[1.0] + [0.0] * 7] * 3, dtype=torch.float64)
    t_neg = torch.tensor([[0.0, 1.0] + [0.0] * 6] * 3, dtype=torch.float64)
    monkeypatch.setattr(ph, "text_features", lambda _ps, _b: (t_pos, t_neg))
    feats = torch.zeros((1, 2, 8), dtype=torch.float64)
    feats[0, 0, 0] = 1.0
    feats[0, 1, 1] = 1.0
    out = forward_features(ps, b, feats, agg_scale=1.0)
    w0 = np.exp(1) / (np.exp(1) + 1)
    assert abs(w0 - 0.7311) < 1e-4
    assert torch.allclose(out.logits_pos, torch.full((1, 3), w0, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(out.logits_neg, torch.full((1, 3), 1 - w0, dtype=torch.float64), atol=1e-12)


def test_single_region_passthrough(monkeypatch):
    _, _, b, ps = tiny_instance(scale=3.0)
    feats = torch.randn((2, 1, 8), dtype=torch.float64)
    t_pos, t_neg = ph.text_features(ps, b)
    out = forward_features(ps, b, feats)
    unit = feats[:, 0] / feats[:, 0].norm(dim=-1, keepdim=True)
    assert torch.allclose(out.logits_pos, 3.0 * unit @ t_pos.T, atol=1e-12)
    assert torch.allclose(out.logits_neg, 3.0 * unit @ t_neg.T, atol=1e-12)


def test_equal_logits_give_half():
    z = torch.zeros((2, 3), dtype=torch.float64)
    s = LevelScores(1, ("a", "b", "c"), z + 0.3, z + 0.3)
    assert torch.equal(s.probs, torch.full((2, 3), 0.5, dtype=torch.float64))


def test_probabilities_valid_and_pair_sums_to_one():
    _, train, b, ps = tiny_instance()
    out = forward(ps, b, [s.image_ref for s in train])
    p = out.probs
    assert ((p > 0) & (p < 1)).all()
    q = torch.softmax(torch.stack([out.logits_pos, out.logits_neg]), dim=0)
    assert torch.allclose(q[0], p, atol=1e-12)
    assert torch.allclose(q.sum(0), torch.ones_like(p))


def _scores(rows, labels=("a", "b", "c")):
    p = torch.tensor(rows, dtype=torch.float64)
    return LevelScores(1, labels, torch.logit(p), torch.zeros_like(p))


def test_threshold_examples():
    assert threshold(_scores([[0.9, 0.1]], ("a", "b"))) == [frozenset({"a"})]
    assert threshold(_scores([[0.6, 0.55, 0.2]])) == [frozenset({"a", "b"})]
    tie = LevelScores(1, ("a", "b"), torch.zeros((1, 2)), torch.zeros((1, 2)))
    assert threshold(tie, 0.5) == [frozenset()]
    with pytest.raises(ValueError):
        threshold(tie, 1.0)


def test_class_permutation_equivariance():
    _, train, b, ps = tiny_instance()
    refs = [s.image_ref for s in train]
    perm = [2, 0, 1]
    permuted = ph.PromptState(
        ps.level_index,
        tuple(ps.labels[i] for i in perm),
        ps.pos_ctx[perm],
        ps.neg_ctx[perm],
        tuple(ps.name_token_ids[i] for i in perm),
    )
    a, c = forward(ps, b, refs).probs, forward(permuted, b, refs).probs
    assert torch.allclose(a[:, perm], c, atol=1e-12)


def test_forward_deterministic():
    _, train, b, ps = tiny_instance()
    refs = [s.image_ref for s in train]
    assert torch.equal(forward(ps, b, refs).probs, forward(ps, b, refs).probs)


def test_forward_shape_checks():
    _, _, b, ps = tiny_instance()
    with pytest.raises(ValueError):
        forward_features(ps, b, torch.zeros((2, 8)))
    bad = init_prompts(LabelSpace.from_labels(1, ps.labels), 2, 2, 5)
    with pytest.raises(ValueError, match="d_tok"):
        forward_features(bad, b, torch.ones((1, 2, 8), dtype=torch.float64))


def test_checkpoint_round_trip(tmp_path):
    h, _, b, ps = tiny_instance()
    path = tmp_path / "level1.json"
    save_prompt_state(ps, path, {"seed": 3})
    back = load_prompt_state(path, h.level(1))
    assert torch.equal(back.pos_ctx, ps.pos_ctx) and torch.equal(back.neg_ctx, ps.neg_ctx)
    assert back.labels == ps.labels and back.name_token_ids == ps.name_token_ids
    save_prompt_state(back, tmp_path / "again.json", {"seed": 3})
    assert path.read_bytes() == (tmp_path / "again.json").read_bytes()


def test_checkpoint_digest_mismatch(tmp_path):
    h, _, _, ps = tiny_instance()
    path = tmp_path / "level1.json"
    save_prompt_state(ps, path)
    other = LabelSpace.from_labels(1, list(ps.labels[:-1]) + ["intruder"])
    with pytest.raises(CheckpointError, match="digest mismatch"):
        load_prompt_state(path, other)
    with pytest.raises(CheckpointError, match="level"):
        load_prompt_state(path, LabelSpace(2, h.level(1).labels))


def test_checkpoint_corruption(tmp_path):
    _, _, _, ps = tiny_instance()
    path = tmp_path / "c.json"
    save_prompt_state(ps, path)
    obj = json.loads(path.read_text())
    obj["labels"][0] = "renamed"
    path.write_text(json.dumps(obj))
    with pytest.raises(CheckpointError, match="digest"):
        load_prompt_state(path)
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_prompt_state(path)
    with pytest.raises(CheckpointError, match="not found"):
        load_prompt_state(tmp_path / "missing.json")


def test_forward_on_synthetic_batch():
    h, (train, _, _), b = synthetic_setup(n_train=8)
    ps = init_prompts(h.level(3), 4, 4, 16, backbone=b)
    out = forward(ps, b, [s.image_ref for s in train])
    assert out.probs.shape == (8, 3)
    assert torch.isfinite(out.logits_pos).all()
