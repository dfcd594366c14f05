"""Decoding-time logit filters: temperature, repetition penalty, top-k, top-p.

Filters apply in the documented order temperature -> repetition penalty ->
top-k -> top-p. All operate on a 1-D logits tensor and return a new tensor;
excluded symbols get -inf so downstream softmax assigns them zero mass.
"""

from __future__ import annotations

from typing import Sequence

import torch

from .corpus import GenerationConfig


def apply_temperature(logits: torch.Tensor, temperature: float) -> torch.Tensor:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    return logits / temperature


def apply_repetition_penalty(logits: torch.Tensor, previous: Sequence[int],
                             penalty: float) -> torch.Tensor:
    """Penalize already-emitted symbols: positive logits divided by the
    penalty, negative logits multiplied, so probability only decreases."""
    if penalty < 1:
        raise ValueError("repetition_penalty must be >= 1")
    if penalty == 1.0 or not previous:
        return logits
    out = logits.clone()
    for idx in set(previous):
        if out[idx] > 0:
            out[idx] = out[idx] / penalty
        else:
            out[idx] = out[idx] * penalty
    return out


def apply_top_k(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Keep exactly min(k, support) highest-logit symbols; 0 disables."""
    if k < 0:
        raise ValueError("top_k must be >= 0")
    if k == 0 or k >= logits.numel():
        return logits
    kth = torch.topk(logits, k).values[-1]
    out = logits.clone()
    out[logits < kth] = float("-inf")
    # Break exact ties at the threshold so exactly k symbols survive.
    if int((out > float("-inf")).sum()) > k:
        order = torch.argsort(logits, descending=True, stable=True)
        out = torch.full_like(logits, float("-inf"))
        out[order[:k]] = logits[order[:k]]
    return out


def apply_top_p(logits: torch.Tensor, p: float) -> torch.Tensor:
    """Nucleus filter: keep the smallest prefix of the probability-sorted
    symbols whose cumulative mass reaches p."""
    if not (0 < p <= 1):
        raise ValueError("top_p must lie in (0,1]")
    if p == 1.0:
        return logits
    probs = torch.softmax(logits, dim=-1)
    order = torch.argsort(probs, descending=True, stable=True)
    cum = torch.cumsum(probs[order], dim=-1)
    # Index of the first symbol whose inclusion reaches mass p.
    cutoff = int(torch.searchsorted(cum, torch.tensor(p)))
    cutoff = min(cutoff, logits.numel() - 1)
    keep = order[:cutoff + 1]
    out = torch.full_like(logits, float("-inf"))
    out[keep] = logits[keep]
    return out


def filter_logits(logits: torch.Tensor, previous: Sequence[int],
                  config: GenerationConfig) -> torch.Tensor:
    logits = apply_temperature(logits, config.temperature)
    logits = apply_repetition_penalty(logits, previous, config.repetition_penalty)
    logits = apply_top_k(logits, config.top_k)
    logits = apply_top_p(logits, config.top_p)
    return logits
