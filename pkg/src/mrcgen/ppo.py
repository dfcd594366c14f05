"""Desk-scale PPO fine-tuning harness for the toy question-generation policy.

A single small autoregressive architecture (GRU language model with a value
head) plays the policy and, as a frozen parameter copy, the reference. The
training loop is the standard RLHF shape: rollout under nucleus sampling,
terminal reward from the reward model with format-aware shaping, per-step
KL penalty against the reference, GAE, clipped-surrogate updates.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import GenerationConfig
from .critics import parse_response, ParsedQA
from .reward import shape_reward
from .sampling import filter_logits


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    kl_coef: float = 0.05
    discount: float = 1.0
    gae_lambda: float = 0.95
    learning_rate: float = 3e-3
    rollout_batch: int = 32
    update_epochs: int = 2
    value_coef: float = 0.5
    iterations: int = 100
    seed: int = 0
    normalize_advantages: bool = True
    adaptive_kl: bool = False
    kl_target: float = 0.05

    def __post_init__(self):
        if not (0 < self.clip_eps < 1):
            raise ValueError("clip_eps must lie in (0,1)")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if not (0 < self.discount <= 1):
            raise ValueError("discount must lie in (0,1]")
        if not (0 <= self.gae_lambda <= 1):
            raise ValueError("gae_lambda must lie in [0,1]")


class PolicyModel(nn.Module):
    """GRU language model over a symbol vocabulary, with a value head."""

    def __init__(self, vocab: Sequence[str], embed_dim: int = 32,
                 hidden_dim: int = 64, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.vocab = list(vocab)
        self.stoi = {s: i for i, s in enumerate(self.vocab)}
        self.embed = nn.Embedding(len(self.vocab), embed_dim)
        self.rnn = nn.GRU(embed_dim, hidden_dim, batch_first=True)
        self.lm_head = nn.Linear(hidden_dim, len(self.vocab))
        self.value_head = nn.Linear(hidden_dim, 1)

    @property
    def eos_id(self) -> int:
        return self.stoi["<eos>"]

    def forward(self, ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-position next-symbol logits and state values for a [T] sequence."""
        emb = self.embed(ids.unsqueeze(0))
        hidden, _ = self.rnn(emb)
        return self.lm_head(hidden).squeeze(0), self.value_head(hidden).squeeze(0).squeeze(-1)

    def encode(self, symbols: Sequence[str]) -> torch.Tensor:
        return torch.tensor([self.stoi[s] for s in symbols], dtype=torch.long)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.vocab[i] for i in ids]


@dataclass
class Trajectory:
    prompt_ids: list[int]
    gen_ids: list[int]
    logp_policy: list[float]
    logp_ref: list[float]
    values: list[float]
    text: str = ""
    reward: float = 0.0
    malformed: bool = False
    step_rewards: list[float] = field(default_factory=list)
    advantages: list[float] = field(default_factory=list)
    returns: list[float] = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    pass


def train_sft(policy: PolicyModel, dataset: Sequence[tuple[list[str], list[str]]],
              epochs: int = 1, seed: int = 0, learning_rate: float = 5e-3,
              batch_size: int = 16) -> PolicyModel:
    """Cross-entropy training on target symbols given prompt symbols."""
    if not dataset:
        raise ValueError("SFT dataset must be non-empty")
    torch.manual_seed(seed)
    opt = torch.optim.Adam(policy.parameters(), lr=learning_rate)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(epochs):
        order = torch.randperm(len(dataset), generator=gen).tolist()
        for start in range(0, len(order), batch_size):
            opt.zero_grad()
            batch = [dataset[i] for i in order[start:start + batch_size]]
            loss = torch.zeros(())
            for prompt, target in batch:
                ids = policy.encode(list(prompt) + list(target))
                logits, _ = policy(ids[:-1])
                n_prompt = len(prompt)
                tgt = ids[n_prompt:]
                loss = loss + F.cross_entropy(logits[n_prompt - 1:], tgt)
            loss = loss / len(batch)
            if not torch.isfinite(loss):
                raise TrainingDiverged("non-finite SFT loss")
            loss.backward()
            opt.step()
    return policy


def perplexity(policy: PolicyModel, dataset: Sequence[tuple[list[str], list[str]]]) -> float:
    """Mean per-symbol perplexity of targets under the policy."""
    total_nll, total_tokens = 0.0, 0
    with torch.no_grad():
        for prompt, target in dataset:
            ids = policy.encode(list(prompt) + list(target))
            logits, _ = policy(ids[:-1])
            n_prompt = len(prompt)
            nll = F.cross_entropy(logits[n_prompt - 1:], ids[n_prompt:], reduction="sum")
            total_nll += float(nll)
            total_tokens += len(target)
    return math.exp(total_nll / total_tokens)


def sample_sequence(policy: PolicyModel, reference: PolicyModel,
                    prompt_ids: list[int], config: GenerationConfig,
                    rng: torch.Generator, max_len: Optional[int] = None,
                    greedy: bool = False) -> Trajectory:
    """Sample one continuation, recording per-step log-probs and values."""
    max_len = max_len or config.max_new_tokens
    ids = list(prompt_ids)
    gen_ids: list[int] = []
    logp_policy: list[float] = []
    logp_ref: list[float] = []
    values: list[float] = []
    with torch.no_grad():
        for _ in range(max_len):
            seq = torch.tensor(ids, dtype=torch.long)
            logits, vals = policy(seq)
            raw_logits = logits[-1]
            filtered = filter_logits(raw_logits, gen_ids, config)
            if greedy:
                nxt = int(torch.argmax(filtered))
            else:
                probs = torch.softmax(filtered, dim=-1)
                nxt = int(torch.multinomial(probs, 1, generator=rng))
            # Log-probs are recorded under the unfiltered distributions so the
            # PPO ratio compares the actual model policies.
            logp_policy.append(float(F.log_softmax(raw_logits, dim=-1)[nxt]))
            ref_logits, _ = reference(seq)
            logp_ref.append(float(F.log_softmax(ref_logits[-1], dim=-1)[nxt]))
            values.append(float(vals[-1]))
            gen_ids.append(nxt)
            ids.append(nxt)
            if nxt == policy.eos_id:
                break
    return Trajectory(prompt_ids=list(prompt_ids), gen_ids=gen_ids,
                      logp_policy=logp_policy, logp_ref=logp_ref, values=values)


def rollout(policy: PolicyModel, reference: PolicyModel,
            prompts: Sequence[list[str]], gen_config: GenerationConfig,
            n: int, seed: int, greedy: bool = False) -> list[Trajectory]:
    """Sample n trajectories cycling over prompts; per-trajectory PRNG streams
    derived from (seed, index) so order of collection cannot matter."""
    if not prompts:
        raise ValueError("prompts must be non-empty")
    trajectories = []
    for i in range(n):
        prompt = prompts[i % len(prompts)]
        rng = torch.Generator().manual_seed((seed * 1_000_003 + i) % (2 ** 63))
        traj = sample_sequence(policy, reference, policy.encode(prompt).tolist(),
                               gen_config, rng, greedy=greedy)
        trajectories.append(traj)
    return trajectories


def assign_rewards(trajectories: Sequence[Trajectory],
                   score_fn: Callable[[str], float],
                   detokenize: Callable[[Sequence[str]], str],
                   decode: Callable[[Sequence[int]], list[str]],
                   kl_coef: float = 0.0,
                   shaping: bool = True) -> list[Trajectory]:
    """Score decoded texts, apply format shaping, fold in per-step KL penalty."""
    for traj in trajectories:
        if not traj.gen_ids:
            traj.text, traj.malformed = "", True
            traj.reward = shape_reward(score_fn(""), True) if shaping else score_fn("")
            traj.step_rewards = []
            continue
        text = detokenize(decode(traj.gen_ids))
        traj.text = text
        traj.malformed = not isinstance(parse_response(text), ParsedQA)
        raw = score_fn(text)
        traj.reward = shape_reward(raw, traj.malformed) if shaping else raw
        steps = len(traj.gen_ids)
        traj.step_rewards = [
            -kl_coef * (traj.logp_policy[t] - traj.logp_ref[t]) for t in range(steps)
        ]
        traj.step_rewards[-1] += traj.reward
    return list(trajectories)


def compute_advantages(rewards: Sequence[float], values: Sequence[float],
                       discount: float, gae_lambda: float) -> tuple[list[float], list[float]]:
    """Generalized advantage estimation with V(terminal) = 0.

    A_t = sum_{l>=0} (discount*lambda)^l * delta_{t+l},
    delta_t = r_t + discount*V_{t+1} - V_t; returns_t = A_t + V_t.
    """
    if len(rewards) != len(values):
        raise ValueError("rewards and values must have equal length")
    T = len(rewards)
    advantages = [0.0] * T
    gae = 0.0
    for t in reversed(range(T)):
        next_value = values[t + 1] if t + 1 < T else 0.0
        delta = rewards[t] + discount * next_value - values[t]
        gae = delta + discount * gae_lambda * gae
        advantages[t] = gae
    returns = [a + v for a, v in zip(advantages, values)]
    return advantages, returns


def ppo_step(policy: PolicyModel, trajectories: Sequence[Trajectory],
             config: PPOConfig, optimizer: torch.optim.Optimizer) -> dict:
    """One epoch of clipped-surrogate updates over the batch.

    Maximizes E[min(ratio*A, clip(ratio, 1-eps, 1+eps)*A)] minus a value
    loss; reports mean ratio, clip fraction, approximate KL and losses.
    """
    stats = {"ratio": 0.0, "clip_fraction": 0.0, "kl": 0.0,
             "policy_loss": 0.0, "value_loss": 0.0}
    n_steps = 0
    optimizer.zero_grad()
    policy_loss = torch.zeros(())
    value_loss = torch.zeros(())
    for traj in trajectories:
        if not traj.gen_ids:
            continue
        full = torch.tensor(traj.prompt_ids + traj.gen_ids, dtype=torch.long)
        logits, values = policy(full[:-1])
        n_prompt = len(traj.prompt_ids)
        gen = full[n_prompt:]
        logp_new = F.log_softmax(logits[n_prompt - 1:], dim=-1).gather(
            1, gen.unsqueeze(1)).squeeze(1)
        logp_old = torch.tensor(traj.logp_policy)
        adv = torch.tensor(traj.advantages)
        ret = torch.tensor(traj.returns)
        ratio = torch.exp(logp_new - logp_old)
        unclipped = ratio * adv
        clipped = torch.clamp(ratio, 1 - config.clip_eps, 1 + config.clip_eps) * adv
        policy_loss = policy_loss - torch.min(unclipped, clipped).sum()
        value_loss = value_loss + F.mse_loss(values[n_prompt - 1:], ret, reduction="sum")
        with torch.no_grad():
            stats["ratio"] += float(ratio.sum())
            stats["clip_fraction"] += float(
                ((ratio - 1).abs() > config.clip_eps).float().sum())
            stats["kl"] += float((logp_old - logp_new).sum())
        n_steps += len(traj.gen_ids)
    if n_steps == 0:
        raise ValueError("no generated steps in batch")
    loss = (policy_loss + config.value_coef * value_loss) / n_steps
    if not torch.isfinite(loss):
        raise TrainingDiverged("non-finite PPO loss")
    loss.backward()
    optimizer.step()
    for key in ("ratio", "clip_fraction", "kl"):
        stats[key] /= n_steps
    stats["policy_loss"] = float(policy_loss.detach()) / n_steps
    stats["value_loss"] = float(value_loss.detach()) / n_steps
    return stats


def train_ppo(policy: PolicyModel, reference: PolicyModel, score_fn,
              prompts: Sequence[list[str]], ppo_config: PPOConfig,
              gen_config: GenerationConfig, detokenize,
              shaping: bool = True,
              log_hook: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Iterate rollout -> reward assignment -> GAE -> clipped updates.

    `score_fn` maps decoded text to a raw scalar reward (typically a trained
    RewardModel.score); shaping applies the format penalty on top. Returns
    the per-iteration training curve.
    """
    for p in reference.parameters():
        p.requires_grad_(False)
    optimizer = torch.optim.Adam(policy.parameters(), lr=ppo_config.learning_rate)
    curve: list[dict] = []
    kl_coef = ppo_config.kl_coef
    for iteration in range(ppo_config.iterations):
        trajectories = rollout(policy, reference, prompts, gen_config,
                               ppo_config.rollout_batch,
                               seed=ppo_config.seed * 7919 + iteration)
        assign_rewards(trajectories, score_fn, detokenize, policy.decode,
                       kl_coef=kl_coef, shaping=shaping)
        flat_adv: list[float] = []
        for traj in trajectories:
            adv, ret = compute_advantages(traj.step_rewards, traj.values,
                                          ppo_config.discount, ppo_config.gae_lambda)
            traj.advantages, traj.returns = adv, ret
            flat_adv.extend(adv)
        if ppo_config.normalize_advantages and len(flat_adv) > 1:
            mu = sum(flat_adv) / len(flat_adv)
            var = sum((a - mu) ** 2 for a in flat_adv) / len(flat_adv)
            std = math.sqrt(var) + 1e-8
            for traj in trajectories:
                traj.advantages = [(a - mu) / std for a in traj.advantages]
                traj.returns = [a + v for a, v in zip(traj.advantages, traj.values)]
        stats = {}
        for _ in range(ppo_config.update_epochs):
            stats = ppo_step(policy, trajectories, ppo_config, optimizer)
        if ppo_config.adaptive_kl and stats:
            if stats["kl"] > 1.5 * ppo_config.kl_target:
                kl_coef *= 1.5
            elif stats["kl"] < ppo_config.kl_target / 1.5:
                kl_coef /= 1.5
        entry = {
            "iteration": iteration,
            "mean_reward": sum(t.reward for t in trajectories) / len(trajectories),
            "malformed_rate": sum(t.malformed for t in trajectories) / len(trajectories),
            "kl": stats.get("kl", 0.0),
            "clip_fraction": stats.get("clip_fraction", 0.0),
        }
        curve.append(entry)
        if log_hook:
            log_hook(entry)
    return curve


def frozen_copy(policy: PolicyModel) -> PolicyModel:
    ref = copy.deepcopy(policy)
    for p in ref.parameters():
        p.requires_grad_(False)
    ref.eval()
    return ref


def mean_shaped_reward(policy: PolicyModel, reference: PolicyModel, score_fn,
                       prompts: Sequence[list[str]], gen_config: GenerationConfig,
                       detokenize, n: int, seed: int) -> tuple[float, float]:
    """Evaluate mean shaped reward and malformed rate without updating."""
    trajectories = rollout(policy, reference, prompts, gen_config, n, seed)
    assign_rewards(trajectories, score_fn, detokenize, policy.decode,
                   kl_coef=0.0, shaping=True)
    mean_r = sum(t.reward for t in trajectories) / len(trajectories)
    mal = sum(t.malformed for t in trajectories) / len(trajectories)
    return mean_r, mal
