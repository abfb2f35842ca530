"""Toy decoder-style transformer used as a token tagger.

Pre-norm blocks with learned positional embeddings. The attention mask is
switchable: ``causal`` lets position i see positions <= i only, ``full``
removes that restriction so every position sees the whole sequence.
Optional low-rank adapters wrap every linear map inside the blocks; the
3-way tagging head is always trainable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .blobio import read_blob, write_blob
from .corpus import B, I, O, TAGS, repair_iob
from .errors import ContractError, ParseError, VersionMismatchError
from .instructions import IGNORE, PAD_ID, TokenizedSample

MASK_MODES = ("causal", "full")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 16
    sigma: float = 32.0

    @property
    def scaling(self) -> float:
        return self.sigma / self.rank


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 16384
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_input_len: int = 128
    mask_mode: str = "full"
    adapter: AdapterConfig | None = field(default_factory=AdapterConfig)
    seed: int = 0
    mlp_ratio: int = 4
    init_std: float = 0.02

    def __post_init__(self):
        if isinstance(self.adapter, dict):
            object.__setattr__(self, "adapter", AdapterConfig(**self.adapter))
        if self.dim % self.n_heads:
            raise ContractError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.mask_mode not in MASK_MODES:
            raise ContractError(f"mask_mode must be one of {MASK_MODES}")
        if self.adapter is not None and self.adapter.rank < 1:
            raise ContractError("adapter rank must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if data.get("adapter") is not None:
            data["adapter"] = AdapterConfig(**data["adapter"])
        return cls(**data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class AdaptedLinear(nn.Module):
    """``base(x) + scaling * x A^T B^T`` with A: (r, in), B: (out, r)."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.base = nn.Linear(in_dim, out_dim)
        self.lora_A: nn.Parameter | None = None
        self.lora_B: nn.Parameter | None = None
        self.scaling = 0.0

    @property
    def has_adapter(self) -> bool:
        return self.lora_A is not None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.base(x)
        if self.lora_A is not None:
            y = y + self.scaling * ((x @ self.lora_A.T) @ self.lora_B.T)
        return y


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.dim
        self.n_heads = cfg.n_heads
        self.ln1 = nn.LayerNorm(d)
        self.q = AdaptedLinear(d, d)
        self.k = AdaptedLinear(d, d)
        self.v = AdaptedLinear(d, d)
        self.o = AdaptedLinear(d, d)
        self.ln2 = nn.LayerNorm(d)
        self.up = AdaptedLinear(d, cfg.mlp_ratio * d)
        self.down = AdaptedLinear(cfg.mlp_ratio * d, d)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        bsz, t, d = x.shape
        h = self.n_heads
        hd = d // h
        z = self.ln1(x)
        q = self.q(z).view(bsz, t, h, hd).transpose(1, 2)
        k = self.k(z).view(bsz, t, h, hd).transpose(1, 2)
        v = self.v(z).view(bsz, t, h, hd).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        att = att.masked_fill(~mask, float("-inf"))
        att = torch.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(bsz, t, d)
        x = x + self.o(y)
        return x + self.down(F.gelu(self.up(self.ln2(x))))


class Tagger(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Embedding(cfg.max_input_len, cfg.dim)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.dim)
        self.head = nn.Linear(cfg.dim, len(TAGS))

    def attention_mask(self, pad: torch.Tensor) -> torch.Tensor:
        """Boolean (batch, 1, T, T) mask, True where attention is allowed."""
        t = pad.shape[1]
        keys = (~pad)[:, None, None, :]
        if self.cfg.mask_mode == "causal":
            tri = torch.tril(torch.ones(t, t, dtype=torch.bool, device=pad.device))
            allowed = keys & tri
        else:
            allowed = keys.expand(-1, 1, t, t)
        # a fully padded query row would produce NaN; let it see itself
        eye = torch.eye(t, dtype=torch.bool, device=pad.device)
        return allowed | eye

    def hidden(self, ids: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        if ids.dim() == 1:
            ids = ids[None]
        if pad is None:
            pad = torch.zeros_like(ids, dtype=torch.bool)
        t = ids.shape[1]
        if t > self.cfg.max_input_len:
            raise ContractError(f"sequence length {t} exceeds max_input_len")
        if int(ids.min()) < 0 or int(ids.max()) >= self.cfg.vocab_size:
            raise ContractError("piece id outside vocabulary")
        pos = torch.arange(t, device=ids.device)
        x = self.tok_emb(ids) + self.pos_emb(pos)[None]
        mask = self.attention_mask(pad)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.ln_f(x)

    def forward(self, ids: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        return self.head(self.hidden(ids, pad))

    def adapted_layers(self) -> list[tuple[str, AdaptedLinear]]:
        return [(n, m) for n, m in self.named_modules() if isinstance(m, AdaptedLinear)]


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> Tagger:
    """Initialise from ``cfg.seed`` and attach adapters if configured."""
    gen = torch.Generator().manual_seed(cfg.seed)
    model = Tagger(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() == 1:
                if name.endswith("weight"):  # layer norm gain
                    p.fill_(1.0)
                else:
                    p.zero_()
            else:
                p.copy_(torch.randn(p.shape, generator=gen) * cfg.init_std)
    model = model.to(dtype)
    if cfg.adapter is not None:
        attach_adapters(model, cfg.adapter, gen)
    return model


@dataclass
class AdapterState:
    names: list[str]
    rank: int
    scaling: float

    def tensors(self, model: Tagger) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        mods = dict(model.adapted_layers())
        return {n: (mods[n].lora_A, mods[n].lora_B) for n in self.names}


def attach_adapters(model: Tagger, adapter: AdapterConfig,
                    generator: torch.Generator | None = None) -> AdapterState:
    """Add zero-initialised-B adapters to every block linear and freeze the backbone."""
    layers = model.adapted_layers()
    for name, layer in layers:
        out_dim, in_dim = layer.base.weight.shape
        if adapter.rank >= min(in_dim, out_dim):
            raise ContractError(
                f"adapter rank {adapter.rank} too large for {name} ({out_dim}x{in_dim})"
            )
    dtype = model.head.weight.dtype
    for name, layer in layers:
        out_dim, in_dim = layer.base.weight.shape
        a = torch.randn(adapter.rank, in_dim, generator=generator) / math.sqrt(in_dim)
        layer.lora_A = nn.Parameter(a.to(dtype))
        layer.lora_B = nn.Parameter(torch.zeros(out_dim, adapter.rank, dtype=dtype))
        layer.scaling = adapter.scaling
    for name, p in model.named_parameters():
        p.requires_grad_("lora_" in name or name.startswith("head."))
    return AdapterState([n for n, _ in layers], adapter.rank, adapter.scaling)


def merge_adapters(model: Tagger) -> Tagger:
    """Copy of ``model`` with ``W + scaling * B A`` folded into each base weight."""
    cfg = replace(model.cfg, adapter=None)
    merged = Tagger(cfg).to(model.head.weight.dtype)
    state = {k: v for k, v in model.state_dict().items() if "lora_" not in k}
    merged.load_state_dict(state)
    with torch.no_grad():
        src = dict(model.adapted_layers())
        for name, layer in merged.adapted_layers():
            s = src[name]
            if s.has_adapter:
                layer.base.weight += s.scaling * (s.lora_B @ s.lora_A)
    for p in merged.parameters():
        p.requires_grad_(True)
    return merged


def trainable_parameters(model: nn.Module) -> list[tuple[str, nn.Parameter]]:
    return [(n, p) for n, p in model.named_parameters() if p.requires_grad]


def parameter_counts(model: nn.Module) -> tuple[int, int]:
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return trainable, total


def forward(sample: TokenizedSample, model: Tagger) -> torch.Tensor:
    """Hidden states (sequence length x dim) for one sample."""
    ids = torch.tensor(sample.piece_ids, dtype=torch.long)
    return model.hidden(ids)[0]


def classify(hidden: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
             word_starts: Sequence[bool] | torch.Tensor) -> torch.Tensor:
    """Softmax over [B, I, O] at the word-start positions."""
    if hidden.dim() != 2 or weight.shape != (len(TAGS), hidden.shape[1]):
        raise ContractError(
            f"head of shape {tuple(weight.shape)} does not fit hidden {tuple(hidden.shape)}"
        )
    starts = torch.as_tensor(word_starts, dtype=torch.bool)
    if starts.shape[0] != hidden.shape[0]:
        raise ContractError("word_starts length differs from sequence length")
    return torch.softmax(hidden[starts] @ weight.T + bias, dim=-1)


def loss(probs: torch.Tensor, gold: Sequence[int] | torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of ``gold`` label ids under ``probs``."""
    gold = torch.as_tensor(gold, dtype=torch.long)
    if probs.shape[0] == 0:
        raise ContractError("loss needs at least one labeled position")
    if gold.shape[0] != probs.shape[0]:
        raise ContractError(f"{gold.shape[0]} labels for {probs.shape[0]} rows")
    picked = probs[torch.arange(len(gold)), gold]
    return -torch.log(picked).mean()


def predict_tags(probs) -> list[str]:
    """Argmax with ties resolved toward O (then B over I), then IOB repair."""
    rows = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
    order = [(O, 2), (B, 0), (I, 1)]
    tags = []
    for row in rows:
        best_tag, best = O, -math.inf
        for tag, j in order:
            if row[j] > best:
                best_tag, best = tag, row[j]
        tags.append(best_tag)
    return repair_iob(tags)


def sample_loss(model: Tagger, sample: TokenizedSample) -> torch.Tensor:
    """Cross-entropy of one sample against its gold labels."""
    ids = torch.tensor(sample.piece_ids, dtype=torch.long)
    logits = model(ids)[0]
    labels = torch.tensor(sample.labels, dtype=torch.long)
    if not bool((labels != IGNORE).any()):
        raise ContractError(f"sample {sample.sample_id!r} has no labeled positions")
    return F.cross_entropy(logits, labels, ignore_index=IGNORE)


def collate(samples: Sequence[TokenizedSample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    t = max(len(s) for s in samples)
    ids = torch.full((len(samples), t), PAD_ID, dtype=torch.long)
    labels = torch.full((len(samples), t), IGNORE, dtype=torch.long)
    pad = torch.ones((len(samples), t), dtype=torch.bool)
    for r, s in enumerate(samples):
        n = len(s)
        ids[r, :n] = torch.tensor(s.piece_ids)
        labels[r, :n] = torch.tensor(s.labels)
        pad[r, :n] = False
    return ids, labels, pad


def batch_loss(model: Tagger, samples: Sequence[TokenizedSample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean over samples of each sample's token-mean cross-entropy.

    Returns (batch objective, per-sample losses).
    """
    ids, labels, pad = collate(samples)
    logits = model(ids, pad)
    per_tok = F.cross_entropy(logits.transpose(1, 2), labels, ignore_index=IGNORE,
                              reduction="none")
    counts = (labels != IGNORE).sum(dim=1)
    if bool((counts == 0).any()):
        bad = [s.sample_id for s, c in zip(samples, counts) if int(c) == 0]
        raise ContractError(f"samples without labeled positions: {bad}")
    per_sample = per_tok.sum(dim=1) / counts
    return per_sample.mean(), per_sample


@torch.no_grad()
def predict_batch(model: Tagger, samples: Sequence[TokenizedSample]) -> list[list[str]]:
    ids, _, pad = collate(samples)
    probs = torch.softmax(model(ids, pad), dim=-1)
    out = []
    for r, s in enumerate(samples):
        starts = torch.tensor(s.start_positions(), dtype=torch.long)
        out.append(predict_tags(probs[r, starts]))
    return out


@dataclass
class Checkpoint:
    model: Tagger
    template_version: str
    tokenizer_id: str
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.model.cfg


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config.config_hash(),
        "template_version": ckpt.template_version,
        "tokenizer_id": ckpt.tokenizer_id,
        "dtype": str(ckpt.model.head.weight.dtype).replace("torch.", ""),
        "adapters": [n for n, m in ckpt.model.adapted_layers() if m.has_adapter],
        "meta": ckpt.meta,
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in ckpt.model.state_dict().items()}
    write_blob(path, header, arrays)


def load_checkpoint(path, template_version: str | None = None,
                    tokenizer_id: str | None = None) -> Checkpoint:
    header, arrays = read_blob(path)
    if header.get("kind") != "checkpoint":
        raise ParseError("file is not a checkpoint", path)
    if header.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {header.get('checkpoint_version')} unsupported"
        )
    if template_version is not None and header["template_version"] != template_version:
        raise VersionMismatchError(
            f"checkpoint uses template {header['template_version']!r}, "
            f"expected {template_version!r}"
        )
    if tokenizer_id is not None and header["tokenizer_id"] != tokenizer_id:
        raise VersionMismatchError(
            f"checkpoint uses tokenizer {header['tokenizer_id']!r}, expected {tokenizer_id!r}"
        )
    cfg = ModelConfig.from_dict(header["config"])
    dtype = getattr(torch, header["dtype"])
    model = build_model(cfg, dtype)
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return Checkpoint(model, header["template_version"], header["tokenizer_id"],
                      header.get("meta", {}))
