import copy
import random

import pytest
import torch

from mrcgen.corpus import GenerationConfig
from mrcgen.ppo import (
    PolicyModel,
    PPOConfig,
    Trajectory,
    assign_rewards,
    compute_advantages,
    frozen_copy,
    mean_shaped_reward,
    perplexity,
    ppo_step,
    rollout,
    train_ppo,
    train_sft,
)
from mrcgen import toy


def small_policy(seed=0):
    return PolicyModel(toy.VOCAB, embed_dim=16, hidden_dim=32, seed=seed)


def params_vector(model):
    return torch.cat([p.detach().flatten() for p in model.parameters()])


class TestTrainSft:
    def test_perplexity_improves(self):
        policy = small_policy()
        data = toy.make_sft_dataset(200, seed=0)
        held_out = toy.make_sft_dataset(40, seed=1)
        before = perplexity(policy, held_out)
        train_sft(policy, data, epochs=1, seed=0)
        after = perplexity(policy, held_out)
        assert after < before

    def test_zero_epochs_unchanged(self):
        policy = small_policy()
        before = params_vector(policy).clone()
        train_sft(policy, toy.make_sft_dataset(20, seed=0), epochs=0, seed=0)
        assert torch.equal(params_vector(policy), before)

    def test_seeded_determinism(self):
        data = toy.make_sft_dataset(50, seed=0)
        p1 = train_sft(small_policy(3), data, epochs=1, seed=7)
        p2 = train_sft(small_policy(3), data, epochs=1, seed=7)
        assert torch.equal(params_vector(p1), params_vector(p2))


class TestRollout:
    def test_greedy_is_seed_independent(self):
        policy = small_policy()
        ref = frozen_copy(policy)
        prompts = toy.make_prompts(2, seed=0)
        config = GenerationConfig(max_new_tokens=8)
        a = rollout(policy, ref, prompts, config, n=2, seed=1, greedy=True)
        b = rollout(policy, ref, prompts, config, n=2, seed=99, greedy=True)
        assert [t.gen_ids for t in a] == [t.gen_ids for t in b]

    def test_top_k_one_equals_greedy(self):
        policy = small_policy()
        ref = frozen_copy(policy)
        prompts = toy.make_prompts(1, seed=0)
        config = GenerationConfig(top_k=1, top_p=1.0, repetition_penalty=1.0,
                                  max_new_tokens=8)
        sampled = rollout(policy, ref, prompts, config, n=1, seed=5)
        greedy = rollout(policy, ref, prompts,
                         GenerationConfig(top_p=1.0, repetition_penalty=1.0,
                                          max_new_tokens=8),
                         n=1, seed=5, greedy=True)
        assert sampled[0].gen_ids == greedy[0].gen_ids

    def test_records_consistent_lengths(self):
        policy = small_policy()
        ref = frozen_copy(policy)
        trajs = rollout(policy, ref, toy.make_prompts(3, seed=0),
                        GenerationConfig(max_new_tokens=6), n=3, seed=0)
        for t in trajs:
            n = len(t.gen_ids)
            assert len(t.logp_policy) == len(t.logp_ref) == len(t.values) == n
            assert all(torch.isfinite(torch.tensor(t.logp_policy)))


class TestAssignRewards:
    def _traj(self, ids, logp=None):
        n = len(ids)
        return Trajectory(prompt_ids=[1], gen_ids=ids,
                          logp_policy=logp or [-1.0] * n,
                          logp_ref=[-1.5] * n, values=[0.0] * n)

    def test_wellformed_keeps_score(self):
        policy = small_policy()
        symbols = toy.make_question_symbols("t1", "f1")
        ids = policy.encode(symbols).tolist()
        traj = self._traj(ids)
        assign_rewards([traj], lambda text: 1.2, toy.detokenize, policy.decode)
        assert traj.reward == pytest.approx(1.2)
        assert not traj.malformed

    def test_malformed_negated(self):
        policy = small_policy()
        ids = policy.encode(["what", "is", "the"]).tolist()
        traj = self._traj(ids)
        assign_rewards([traj], lambda text: 1.2, toy.detokenize, policy.decode)
        assert traj.malformed
        assert traj.reward == pytest.approx(-1.2)

    def test_zero_kl_gives_terminal_only(self):
        policy = small_policy()
        ids = policy.encode(["what", "is"]).tolist()
        traj = self._traj(ids)
        assign_rewards([traj], lambda text: 0.5, toy.detokenize, policy.decode,
                       kl_coef=0.0)
        assert traj.step_rewards[:-1] == [0.0]
        assert traj.step_rewards[-1] == traj.reward


def gae_brute_force(rewards, values, gamma, lam):
    """O(T^2) double-sum oracle for generalized advantage estimation."""
    T = len(rewards)
    deltas = [rewards[t] + gamma * (values[t + 1] if t + 1 < T else 0.0) - values[t]
              for t in range(T)]
    return [sum((gamma * lam) ** l * deltas[t + l] for l in range(T - t))
            for t in range(T)]


class TestComputeAdvantages:
    def test_telescoping_terminal_reward(self):
        r = 2.5
        rewards = [0.0, 0.0, 0.0, r]
        values = [0.0] * 4
        adv, ret = compute_advantages(rewards, values, 1.0, 1.0)
        assert all(a == pytest.approx(r) for a in adv)
        assert ret == pytest.approx(adv)

    def test_lambda_zero_is_td_residual(self):
        rewards = [1.0, -0.5, 2.0]
        values = [0.3, 0.7, -0.2]
        adv, _ = compute_advantages(rewards, values, 0.9, 0.0)
        for t in range(3):
            nxt = values[t + 1] if t + 1 < 3 else 0.0
            assert adv[t] == pytest.approx(rewards[t] + 0.9 * nxt - values[t])

    def test_matches_brute_force_oracle(self):
        rng = random.Random(0)
        for _ in range(200):
            T = rng.randint(1, 10)
            rewards = [rng.uniform(-2, 2) for _ in range(T)]
            values = [rng.uniform(-2, 2) for _ in range(T)]
            gamma = rng.uniform(0.5, 1.0)
            lam = rng.uniform(0.0, 1.0)
            adv, ret = compute_advantages(rewards, values, gamma, lam)
            expected = gae_brute_force(rewards, values, gamma, lam)
            for a, e in zip(adv, expected):
                assert abs(a - e) < 1e-9
            for r_, a, v in zip(ret, adv, values):
                assert r_ == pytest.approx(a + v)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_advantages([1.0], [0.0, 0.0], 1.0, 1.0)


def _fixture_batch(policy):
    """Two short trajectories with stored log-probs taken from the policy
    itself, so the initial ratio is exactly 1."""
    ref = frozen_copy(policy)
    trajs = rollout(policy, ref, toy.make_prompts(2, seed=0),
                    GenerationConfig(max_new_tokens=5), n=2, seed=0)
    for t in trajs:
        t.advantages = [0.5] * len(t.gen_ids)
        t.returns = [0.5 + v for v in t.values]
    return trajs


class TestPpoStep:
    def test_clip_fraction_zero_at_ratio_one(self):
        policy = small_policy()
        trajs = _fixture_batch(policy)
        config = PPOConfig(clip_eps=0.2, learning_rate=0.0)
        opt = torch.optim.SGD(policy.parameters(), lr=0.0)
        stats = ppo_step(policy, trajs, config, opt)
        assert stats["clip_fraction"] == 0.0
        assert stats["ratio"] == pytest.approx(1.0, abs=1e-6)
        # surrogate at ratio 1 equals mean advantage (negated as a loss)
        assert stats["policy_loss"] == pytest.approx(-0.5, abs=1e-6)

    def test_clip_arithmetic(self):
        # rho = 1.5, eps = 0.2, A > 0 -> contribution clipped to 1.2 * A
        ratio = torch.tensor([1.5])
        adv = torch.tensor([2.0])
        clipped = torch.clamp(ratio, 0.8, 1.2) * adv
        assert float(torch.min(ratio * adv, clipped)) == pytest.approx(1.2 * 2.0)

    def test_hand_built_two_step_batch(self):
        policy = small_policy()
        traj = rollout(policy, frozen_copy(policy), toy.make_prompts(1, seed=0),
                       GenerationConfig(max_new_tokens=2), n=1, seed=0)[0]
        # Perturb stored log-probs so ratios differ from 1 by a known factor.
        shift = [0.1, -0.3][: len(traj.gen_ids)]
        traj.logp_policy = [lp - s for lp, s in zip(traj.logp_policy, shift)]
        traj.advantages = [1.0, -2.0][: len(traj.gen_ids)]
        traj.returns = [a + v for a, v in zip(traj.advantages, traj.values)]
        eps = 0.2
        expected = 0.0
        for s, a in zip(shift, traj.advantages):
            rho = torch.exp(torch.tensor(s)).item()
            unclipped = rho * a
            clipped = min(max(rho, 1 - eps), 1 + eps) * a
            expected += min(unclipped, clipped)
        config = PPOConfig(clip_eps=eps)
        opt = torch.optim.SGD(policy.parameters(), lr=0.0)
        stats = ppo_step(policy, [traj], config, opt)
        n = len(traj.gen_ids)
        assert stats["policy_loss"] * n == pytest.approx(-expected, abs=1e-6)

    def test_clipped_never_exceeds_unclipped_for_positive_advantage(self):
        rng = random.Random(1)
        for _ in range(100):
            rho = rng.uniform(0.1, 3.0)
            a = rng.uniform(0.0, 2.0)
            eps = 0.2
            clipped = min(max(rho, 1 - eps), 1 + eps) * a
            assert min(rho * a, clipped) <= rho * a + 1e-12


class TestVanillaGradientEquivalence:
    def test_large_eps_matches_policy_gradient(self):
        policy = small_policy()
        trajs = _fixture_batch(policy)
        # Clipped-surrogate gradient with an effectively infinite clip window.
        config = PPOConfig(clip_eps=0.999, value_coef=0.0)
        opt = torch.optim.SGD(policy.parameters(), lr=0.0)
        ppo_step(policy, trajs, config, opt)

        def grad_vector():
            return torch.cat([
                (p.grad if p.grad is not None else torch.zeros_like(p)).flatten().clone()
                for p in policy.parameters()])

        surrogate_grad = grad_vector()
        for p in policy.parameters():
            p.grad = None
        # Vanilla policy gradient: -E[A * log pi] on the same batch.
        loss = torch.zeros(())
        n = 0
        for t in trajs:
            full = torch.tensor(t.prompt_ids + t.gen_ids)
            logits, _ = policy(full[:-1])
            np_ = len(t.prompt_ids)
            logp = torch.log_softmax(logits[np_ - 1:], dim=-1).gather(
                1, full[np_:].unsqueeze(1)).squeeze(1)
            loss = loss - (torch.tensor(t.advantages) * logp).sum()
            n += len(t.gen_ids)
        (loss / n).backward()
        pg_grad = grad_vector()
        cos = torch.nn.functional.cosine_similarity(surrogate_grad, pg_grad, dim=0)
        assert float(cos) > 0.999


class TestTrainPpo:
    def test_zero_iterations_unchanged(self):
        policy = small_policy()
        ref = frozen_copy(policy)
        before = params_vector(policy).clone()
        curve = train_ppo(policy, ref, lambda text: 0.0, toy.make_prompts(2, seed=0),
                          PPOConfig(iterations=0), GenerationConfig(max_new_tokens=4),
                          toy.detokenize)
        assert curve == []
        assert torch.equal(params_vector(policy), before)

    def test_reference_parameters_untouched(self):
        policy = small_policy()
        train_sft(policy, toy.make_sft_dataset(100, seed=0), epochs=1, seed=0)
        ref = frozen_copy(policy)
        ref_before = params_vector(ref).clone()
        train_ppo(policy, ref, toy.marker_count, toy.make_prompts(4, seed=0),
                  PPOConfig(iterations=3, rollout_batch=8),
                  GenerationConfig(max_new_tokens=14), toy.detokenize)
        assert torch.equal(params_vector(ref), ref_before)

    def test_reward_improves_on_toy_signal(self):
        policy = small_policy(seed=1)
        train_sft(policy, toy.make_sft_dataset(300, seed=1), epochs=2, seed=1)
        ref = frozen_copy(policy)
        prompts = toy.make_prompts(8, seed=1)
        gen = GenerationConfig(max_new_tokens=14)
        base, _ = mean_shaped_reward(policy, ref, toy.marker_count, prompts,
                                     gen, toy.detokenize, n=64, seed=123)
        train_ppo(policy, ref, toy.marker_count, prompts,
                  PPOConfig(iterations=30, rollout_batch=16, seed=1), gen,
                  toy.detokenize)
        final, _ = mean_shaped_reward(policy, ref, toy.marker_count, prompts,
                                      gen, toy.detokenize, n=64, seed=123)
        assert final > base
