import math
import random

import numpy as np
import pytest
import torch

from instructner.corpus import B, I, O, is_iob_valid
from instructner.errors import ContractError, VersionMismatchError
from instructner.instructions import IGNORE, TokenizedSample, WhitespaceTokenizer, compose_input
from instructner.model import (
    AdapterConfig,
    Checkpoint,
    ModelConfig,
    attach_adapters,
    batch_loss,
    build_model,
    classify,
    forward,
    load_checkpoint,
    loss,
    merge_adapters,
    parameter_counts,
    predict_batch,
    predict_tags,
    sample_loss,
    save_checkpoint,
    trainable_parameters,
)

TOY = dict(vocab_size=64, dim=16, n_layers=2, n_heads=4, max_input_len=16, init_std=0.3)


def toy(mask_mode="full", adapter=None, seed=0, dtype=torch.float32, **kw):
    return build_model(ModelConfig(**{**TOY, **kw}, mask_mode=mask_mode, adapter=adapter,
                                   seed=seed), dtype)


def randomize_adapters(model, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, layer in model.adapted_layers():
            if layer.has_adapter:
                layer.lora_B.copy_(torch.randn(layer.lora_B.shape, generator=g) * 0.1)


def finite_difference_check(model, sample, h=1e-5, rel=1e-4, atol=1e-9):
    """Compare autograd against central differences for every trainable scalar."""
    params = trainable_parameters(model)
    model.zero_grad()
    sample_loss(model, sample).backward()
    worst = 0.0
    with torch.no_grad():
        for _, p in params:
            flat = p.data.view(-1)
            grad = p.grad.reshape(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = sample_loss(model, sample).item()
                flat[i] = old - h
                down = sample_loss(model, sample).item()
                flat[i] = old
                fd = (up - down) / (2 * h)
                ad = grad[i].item()
                err = abs(fd - ad) - rel * max(abs(fd), abs(ad))
                worst = max(worst, err)
                assert err <= atol, (fd, ad)
    return worst


def toy_sample(n=8, vocab=64, seed=0):
    rng = random.Random(seed)
    ids = tuple(rng.randrange(1, vocab) for _ in range(n))
    labels = tuple([IGNORE] * 3 + [rng.randrange(3) for _ in range(n - 3)])
    starts = tuple(lab != IGNORE for lab in labels)
    return TokenizedSample(ids, labels, starts, n - 3, n - 3)


def test_causal_prefix_invariance():
    model = toy("causal")
    rng = random.Random(0)
    with torch.no_grad():
        for _ in range(30):
            n = rng.randint(2, 16)
            ids = torch.tensor([rng.randrange(1, 64) for _ in range(n)])
            j = rng.randrange(1, n)
            edited = ids.clone()
            edited[j:] = torch.tensor([rng.randrange(1, 64) for _ in range(n - j)])
            a, b = model.hidden(ids)[0], model.hidden(edited)[0]
            assert torch.equal(a[:j], b[:j])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_mask_sees_the_future(seed):
    model = toy("full", seed=seed)
    ids = torch.tensor([5, 9, 13, 2, 40, 7])
    edited = ids.clone()
    edited[-1] = 41
    with torch.no_grad():
        a, b = model.hidden(ids)[0], model.hidden(edited)[0]
    assert not torch.equal(a[0], b[0])


def test_single_token_masks_coincide():
    ids = torch.tensor([17])
    with torch.no_grad():
        a = toy("causal", seed=4).hidden(ids)
        b = toy("full", seed=4).hidden(ids)
    assert torch.equal(a, b)


def test_hidden_finite_and_vocab_checked():
    model = toy()
    s = toy_sample()
    assert torch.isfinite(forward(s, model)).all()
    bad = TokenizedSample((1, 64), (IGNORE, 0), (False, True), 1, 1)
    with pytest.raises(ContractError):
        forward(bad, model)


@pytest.mark.parametrize("adapter", [None, AdapterConfig(rank=2, sigma=4.0)])
@pytest.mark.parametrize("mask_mode", ["causal", "full"])
def test_gradients_match_finite_differences(adapter, mask_mode):
    model = toy(mask_mode, adapter, seed=3, dtype=torch.float64, dim=8, n_heads=2,
                n_layers=1, vocab_size=16, max_input_len=8, mlp_ratio=2)
    randomize_adapters(model)
    finite_difference_check(model, toy_sample(8, vocab=16, seed=1))


def test_head_gradient_two_tokens():
    torch.manual_seed(0)
    hidden = torch.randn(2, 5, dtype=torch.float64)
    w = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
    b = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    gold = [0, 2]
    loss(classify(hidden, w, b, [True, True]), gold).backward()
    h = 1e-5
    with torch.no_grad():
        for idx in np.ndindex(3, 5):
            wp, wm = w.detach().clone(), w.detach().clone()
            wp[idx] += h
            wm[idx] -= h
            fd = (loss(classify(hidden, wp, b, [True, True]), gold)
                  - loss(classify(hidden, wm, b, [True, True]), gold)) / (2 * h)
            assert float(fd) == pytest.approx(float(w.grad[idx]), rel=1e-4, abs=1e-10)


def test_classify_examples():
    hidden = torch.randn(4, 6)
    starts = [True, False, True, True]
    out = classify(hidden, torch.zeros(3, 6), torch.zeros(3), starts)
    assert out.shape == (3, 3)
    assert torch.allclose(out, torch.full((3, 3), 1 / 3))
    out = classify(hidden, torch.zeros(3, 6), torch.tensor([10.0, 0.0, -10.0]), starts)
    assert torch.allclose(out, torch.tensor([1.0, 0.0, 0.0]).expand(3, 3), atol=1e-4)
    rnd = classify(hidden, torch.randn(3, 6), torch.randn(3), starts)
    assert torch.allclose(rnd.sum(-1), torch.ones(3), atol=1e-6)
    assert ((rnd >= 0) & (rnd <= 1)).all()
    with pytest.raises(ContractError):
        classify(hidden, torch.zeros(3, 5), torch.zeros(3), starts)


def test_loss_examples():
    onehot = torch.eye(3)
    assert float(loss(onehot, [0, 1, 2])) == pytest.approx(0.0, abs=1e-7)
    uniform = torch.full((4, 3), 1 / 3)
    assert float(loss(uniform, [0, 2, 1, 1])) == pytest.approx(math.log(3), abs=1e-4)
    with pytest.raises(ContractError):
        loss(torch.zeros(0, 3), [])


def test_predict_tags_examples():
    assert predict_tags(np.tile([0.0, 0.0, 1.0], (4, 1))) == [O] * 4
    assert predict_tags(np.array([[0.1, 0.8, 0.1]])) == [B]
    assert predict_tags(np.array([[0.4, 0.2, 0.4]])) == [O]
    rng = np.random.default_rng(0)
    for _ in range(1000):
        rows = rng.dirichlet(np.ones(3), size=rng.integers(1, 12))
        assert is_iob_valid(predict_tags(rows))


def test_fresh_adapters_bitwise_identity():
    base = toy(adapter=None, seed=5)
    adapted = toy(adapter=None, seed=5)
    attach_adapters(adapted, AdapterConfig(rank=4, sigma=8.0), torch.Generator().manual_seed(1))
    ids = torch.tensor([[3, 8, 1, 60, 22]])
    with torch.no_grad():
        assert torch.equal(base(ids), adapted(ids))


def test_merge_reproduces_adapted_forward():
    model = toy(adapter=AdapterConfig(rank=4, sigma=8.0), seed=6)
    randomize_adapters(model, 2)
    merged = merge_adapters(model)
    ids = torch.tensor([[3, 8, 1, 60, 22, 9]])
    with torch.no_grad():
        assert torch.allclose(model(ids), merged(ids), atol=1e-5)
    assert not any(layer.has_adapter for _, layer in merged.adapted_layers())


def test_adapter_freezes_backbone_and_ratio():
    model = build_model(ModelConfig())
    names = [n for n, _ in trainable_parameters(model)]
    assert all("lora_" in n or n.startswith("head.") for n in names)
    trainable, total = parameter_counts(model)
    assert trainable / total < 0.05
    full = build_model(ModelConfig(adapter=None))
    assert parameter_counts(full)[0] == parameter_counts(full)[1]


def test_rank_too_large():
    with pytest.raises(ContractError):
        build_model(ModelConfig(**TOY, adapter=AdapterConfig(rank=16)))
    with pytest.raises(ContractError):
        ModelConfig(dim=10, n_heads=4)
    with pytest.raises(ContractError):
        ModelConfig(mask_mode="sideways")


def test_batch_padding_does_not_leak():
    model = toy()
    tok = WhitespaceTokenizer(64)
    samples = [compose_input("go :", ["a", "b", "c"], tok, [B, I, O]),
               compose_input("go :", ["d"], tok, [B]),
               compose_input("go :", "e f g h i j".split(), tok, [O] * 6)]
    objective, per = batch_loss(model, samples)
    singles = torch.stack([sample_loss(model, s) for s in samples])
    assert torch.allclose(per, singles, atol=1e-6)
    assert float(objective.detach()) == pytest.approx(float(singles.detach().mean()), abs=1e-6)
    tags = predict_batch(model, samples)
    assert [len(t) for t in tags] == [3, 1, 6]


def test_init_is_seeded():
    a, b, c = toy(seed=1), toy(seed=1), toy(seed=2)
    for (n, p), (_, q), (_, r) in zip(a.state_dict().items(), b.state_dict().items(),
                                      c.state_dict().items()):
        assert torch.equal(p, q), n
    assert not torch.equal(a.tok_emb.weight, c.tok_emb.weight)


def test_checkpoint_roundtrip(tmp_path):
    model = toy(adapter=AdapterConfig(rank=2, sigma=4.0), seed=7)
    randomize_adapters(model)
    ck = Checkpoint(model, "v1", "ws-hash-v1/64", {"seed": 7})
    save_checkpoint(tmp_path / "a.blob", ck)
    save_checkpoint(tmp_path / "b.blob", ck)
    assert (tmp_path / "a.blob").read_bytes() == (tmp_path / "b.blob").read_bytes()
    back = load_checkpoint(tmp_path / "a.blob", "v1", "ws-hash-v1/64")
    ids = torch.tensor([[1, 2, 3, 4]])
    with torch.no_grad():
        assert torch.equal(back.model(ids), model(ids))
    assert back.meta == {"seed": 7}
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "a.blob", template_version="v2")
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "a.blob", tokenizer_id="other")
