"""Pairwise reward model (ranking loss, optional margin) and reward shaping."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .difficulty import ComparisonPair

UNK = "<unk>"
SEP = "<sep>"


def rm_loss(r_chosen: float, r_rejected: float, margin: int = 0,
            use_margin: bool = False) -> float:
    """Ranking loss -log sigmoid(r_chosen - r_rejected [- margin]).

    Computed as softplus(-(z)) for numerical stability; strictly decreasing
    in the score difference.
    """
    if not (math.isfinite(r_chosen) and math.isfinite(r_rejected)):
        raise ValueError("reward scores must be finite")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    z = r_chosen - r_rejected - (margin if use_margin else 0)
    # softplus(-z) = log(1 + exp(-z)), overflow-safe
    if -z > 30:
        return -z
    return math.log1p(math.exp(-z))


def rm_loss_grad(r_chosen: float, r_rejected: float, margin: int = 0,
                 use_margin: bool = False) -> tuple[float, float]:
    """Analytic gradient of rm_loss w.r.t. (r_chosen, r_rejected)."""
    z = r_chosen - r_rejected - (margin if use_margin else 0)
    sig = 1.0 / (1.0 + math.exp(-z)) if z > -30 else math.exp(z)
    return (sig - 1.0, 1.0 - sig)


def shape_reward(r: float, malformed: bool) -> float:
    """Format-aware shaping: malformed generations get the negative
    absolute reward, well-formed ones pass through unchanged."""
    if not math.isfinite(r):
        raise ValueError("reward must be finite")
    return -abs(r) if malformed else r


@dataclass
class RMTrainConfig:
    use_margin: bool = False
    use_input: bool = False
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    embed_dim: int = 32
    hidden_dim: int = 64

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("learning rate and batch size must be positive, epochs >= 0")


class RewardModel(nn.Module):
    """Tiny trainable scorer: learned embeddings, mean pooling, 2-layer head.

    When use_input is set the passage tokens are prepended (with a separator)
    so the score can condition on the context.
    """

    def __init__(self, vocab: dict[str, int], config: RMTrainConfig):
        super().__init__()
        self.vocab = vocab
        self.config = config
        self.embedding = nn.Embedding(len(vocab), config.embed_dim)
        self.head = nn.Sequential(
            nn.Linear(config.embed_dim, config.hidden_dim),
            nn.Tanh(),
            nn.Linear(config.hidden_dim, 1),
        )

    @staticmethod
    def build_vocab(texts: Sequence[str]) -> dict[str, int]:
        vocab = {UNK: 0, SEP: 1}
        for text in texts:
            for tok in text.split():
                vocab.setdefault(tok, len(vocab))
        return vocab

    def encode(self, question: str, context: Optional[str] = None) -> torch.Tensor:
        toks: list[str] = []
        if self.config.use_input and context:
            toks.extend(context.split())
            toks.append(SEP)
        toks.extend(question.split())
        ids = [self.vocab.get(t, 0) for t in toks] or [0]
        return torch.tensor(ids, dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        pooled = self.embedding(ids).mean(dim=0)
        return self.head(pooled).squeeze(-1)

    @torch.no_grad()
    def score(self, question: str, context: Optional[str] = None) -> float:
        self.eval()
        return float(self.forward(self.encode(question, context)))


class TrainingDiverged(RuntimeError):
    pass


def train_reward_model(train_pairs: Sequence[ComparisonPair],
                       config: RMTrainConfig,
                       dev_pairs: Sequence[ComparisonPair] = ()) -> tuple[RewardModel, list[dict]]:
    """Mini-batch gradient descent on the pairwise ranking loss.

    Returns the trained model and a per-epoch log of mean loss and dev
    accuracy. Deterministic under config.seed.
    """
    if not train_pairs:
        raise ValueError("train pair set must be non-empty")
    torch.manual_seed(config.seed)
    texts = [p.chosen for p in train_pairs] + [p.rejected for p in train_pairs]
    if config.use_input:
        texts += [p.context_text for p in train_pairs]
    vocab = RewardModel.build_vocab(texts)
    model = RewardModel(vocab, config)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)
    log: list[dict] = []

    for epoch in range(config.epochs):
        model.train()
        order = torch.randperm(len(train_pairs), generator=gen).tolist()
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[start:start + config.batch_size]]
            opt.zero_grad()
            loss = torch.zeros(())
            for p in batch:
                r_c = model(model.encode(p.chosen, p.context_text))
                r_r = model(model.encode(p.rejected, p.context_text))
                z = r_c - r_r - (p.margin if config.use_margin else 0)
                loss = loss + F.softplus(-z)
            loss = loss / len(batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        entry = {"epoch": epoch, "loss": sum(losses) / len(losses)}
        if dev_pairs:
            entry["dev_accuracy"] = rm_accuracy(model, dev_pairs)
        log.append(entry)
    return model, log


def rm_accuracy(model: RewardModel, pairs: Sequence[ComparisonPair]) -> float:
    """Fraction of pairs ranked correctly; ties count as incorrect."""
    if not pairs:
        raise ValueError("pair set must be non-empty")
    correct = 0
    for p in pairs:
        if model.score(p.chosen, p.context_text) > model.score(p.rejected, p.context_text):
            correct += 1
    return correct / len(pairs)


_CHECKPOINT_MAGIC = b"MRGN"


def save_checkpoint(model: RewardModel, path: str | Path) -> None:
    """Versioned binary checkpoint with an embedded JSON config header."""
    header = json.dumps({
        "version": 1,
        "config": asdict(model.config),
        "vocab": model.vocab,
    }).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        torch.save(model.state_dict(), fh)


def load_checkpoint(path: str | Path) -> RewardModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a reward-model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = RewardModel(header["vocab"], RMTrainConfig(**header["config"]))
        model.load_state_dict(torch.load(fh, weights_only=True))
    model.eval()
    return model
