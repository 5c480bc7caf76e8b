import numpy as np
import pytest

from stancerl import agent as ag
from stancerl import environment as env
from stancerl.autodiff import Tensor, parameter
from stancerl.data import Comment, SynthConfig, Thread, generate
from stancerl.errors import ValidationError
from stancerl.optim import Adam
from stancerl.training import TrainConfig, build_thread_vocab, init_params


def tiny_cfg(**kw):
    defaults = dict(d=6, d_w=6, max_len=8, comment_capacity=3, lstm_hidden=3,
                    episodes=2, seed=11)
    defaults.update(kw)
    return TrainConfig(**defaults)


def zeroed_agent(cfg):
    params = ag.AgentParams.init(cfg, np.random.default_rng(0))
    for t in params.tensors().values():
        t.data = np.zeros_like(t.data)
    return params


class TestPolicyProbs:
    def test_all_zero_parameters_symmetric(self):
        cfg = tiny_cfg()
        params = zeroed_agent(cfg)
        tweet = Tensor(np.random.default_rng(1).normal(size=(1, 6)))
        state = Tensor(np.random.default_rng(2).normal(size=(3, 6)))
        probs = ag.policy_probs(tweet, state, np.ones(3), params)
        np.testing.assert_allclose(probs.data, np.full((3, 2), 0.5))

    def test_rows_are_distributions(self):
        cfg = tiny_cfg()
        params = ag.AgentParams.init(cfg, np.random.default_rng(3))
        rng = np.random.default_rng(4)
        probs = ag.policy_probs(Tensor(rng.normal(size=(1, 6))),
                                Tensor(rng.normal(size=(3, 6))),
                                np.ones(3), params)
        np.testing.assert_allclose(probs.data.sum(axis=1), np.ones(3), atol=1e-9)
        assert (probs.data > 0).all() and (probs.data < 1).all()

    def test_sequence_order_matters(self):
        cfg = tiny_cfg()
        params = ag.AgentParams.init(cfg, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        tweet = Tensor(rng.normal(size=(1, 6)))
        state = rng.normal(size=(2, 6))
        p1 = ag.policy_probs(tweet, Tensor(state), np.ones(2), params).data
        p2 = ag.policy_probs(tweet, Tensor(state[::-1].copy()), np.ones(2), params).data
        assert not np.allclose(p1, p2[::-1])

    def test_masked_rows_constant_and_inert(self):
        cfg = tiny_cfg()
        params = ag.AgentParams.init(cfg, np.random.default_rng(7))
        rng = np.random.default_rng(8)
        tweet = Tensor(rng.normal(size=(1, 6)))
        base = rng.normal(size=(3, 6))
        base[2] = 0.0
        mask = np.array([1.0, 1.0, 0.0])
        p1 = ag.policy_probs(tweet, Tensor(base), mask, params).data
        np.testing.assert_array_equal(p1[2], [0.5, 0.5])
        junk = base.copy()
        junk[2] = rng.normal(size=6) * 100  # perturb the padding row
        p2 = ag.policy_probs(tweet, Tensor(junk), mask, params).data
        np.testing.assert_array_equal(p1, p2)


class TestSampleActions:
    def test_degenerate_distribution(self):
        probs = np.array([[1.0, 0.0], [1.0, 0.0]])
        rng = np.random.default_rng(0)
        for _ in range(20):
            actions = ag.sample_actions(probs, np.ones(2), rng)
            np.testing.assert_array_equal(actions, [0, 0])

    def test_monte_carlo_frequency(self):
        probs = np.full((1, 2), 0.5)
        rng = np.random.default_rng(1)
        draws = [ag.sample_actions(probs, np.ones(1), rng)[0] for _ in range(10000)]
        assert abs(np.mean(draws) - 0.5) < 0.02

    def test_masked_rows_forced_zero(self):
        probs = np.array([[0.0, 1.0], [0.0, 1.0]])
        rng = np.random.default_rng(2)
        actions = ag.sample_actions(probs, np.array([1.0, 0.0]), rng)
        assert actions[0] == 1 and actions[1] == 0

    def test_greedy_tie_goes_to_remove(self):
        probs = np.array([[0.5, 0.5], [0.4, 0.6]])
        actions = ag.greedy_actions_from_probs(probs, np.ones(2))
        np.testing.assert_array_equal(actions, [0, 1])


class TestComputeReturns:
    def test_last_step_equals_reward_both_modes(self):
        rewards = np.array([0.3, -0.1, 0.5])
        for mode in ("literal", "return_to_go"):
            out = ag.compute_returns(rewards, 0.9, mode)
            assert abs(out[-1] - 0.5) < 1e-15

    def test_literal_direct_summation(self):
        # K=10, step 8 leaves two terms: R * (1 + gamma)
        rewards = np.zeros(10)
        rewards[8] = 0.5
        out = ag.compute_returns(rewards, 0.9, "literal")
        assert abs(out[8] - 0.5 * (1 + 0.9)) < 1e-12

    def test_literal_matches_bruteforce_series(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            k = int(rng.integers(1, 12))
            gamma = float(rng.uniform(0, 1))
            rewards = rng.normal(size=k)
            out = ag.compute_returns(rewards, gamma, "literal")
            for i in range(k):
                brute = sum(rewards[i] * gamma ** j for j in range(k - i))
                assert abs(out[i] - brute) < 1e-12

    def test_gamma_zero_return_to_go_is_identity(self):
        rewards = np.array([0.2, -0.4, 0.6])
        out = ag.compute_returns(rewards, 0.0, "return_to_go")
        np.testing.assert_allclose(out, rewards)

    def test_gamma_one_literal(self):
        rewards = np.array([1.0, 1.0, 1.0])
        out = ag.compute_returns(rewards, 1.0, "literal")
        np.testing.assert_allclose(out, [3.0, 2.0, 1.0])

    def test_bad_gamma(self):
        with pytest.raises(ValidationError):
            ag.compute_returns(np.ones(3), 1.5)


def synthetic_encoding(cfg, seed=0):
    synth = SynthConfig(threads=1, comments_per_thread=cfg.comment_capacity,
                        vocab_size=20, tokens_per_text=5, seed=seed)
    threads = generate(synth)
    vocab = build_thread_vocab(threads)
    env_p, agent_p = init_params(cfg, vocab)
    rng = np.random.default_rng(99)
    env_p.cls_w4.data = 0.1 * rng.standard_normal(env_p.cls_w4.shape)
    enc = env.encode_thread(threads[0], vocab, env_p, cfg)
    return enc, env_p, agent_p


class TestPolicyUpdate:
    def test_zero_returns_leave_parameters_unchanged(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        before = {k: t.data.copy() for k, t in agent_p.tensors().items()}
        trace = ag.EpisodeTrace(mask=enc.mask, states=[enc.comments.data.copy()],
                                actions=[enc.mask.astype(np.intp)],
                                log_probs=[np.zeros(3)], rewards=[0.0],
                                returns=np.zeros(1))
        opt = Adam(agent_p.tensors().values(), maximize=True)
        ag.policy_update(trace, 0, enc.tweet, agent_p, opt)
        for k, t in agent_p.tensors().items():
            np.testing.assert_array_equal(t.data, before[k])

    def test_surrogate_gradient_matches_finite_differences(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        state = enc.comments.data.copy()
        actions = np.array([1, 0, 1], dtype=np.intp)
        ret = 0.7

        def surrogate_value():
            probs = ag.policy_probs(enc.tweet, Tensor(state), enc.mask, agent_p)
            return ret * sum(np.log(probs.data[n, actions[n]]) for n in range(3))

        from stancerl import autodiff as ad_ops
        from stancerl.autodiff import Trace, backward
        for t in agent_p.tensors().values():
            t.grad = None
        with Trace() as tr:
            probs = ag.policy_probs(enc.tweet, Tensor(state), enc.mask, agent_p)
            logps = [ad_ops.log(ad_ops.pick(probs, n, int(actions[n])))
                     for n in range(3)]
            surr = ad_ops.add_n(logps)
        backward(surr, tr, seed=ret)

        h = 1e-5
        rng = np.random.default_rng(12)
        for name, t in agent_p.tensors().items():
            flat = t.data.reshape(-1)
            grad = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
            for k in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                orig = flat[k]
                flat[k] = orig + h
                fp = surrogate_value()
                flat[k] = orig - h
                fm = surrogate_value()
                flat[k] = orig
                fd = (fp - fm) / (2 * h)
                rel = abs(grad[k] - fd) / max(1.0, abs(grad[k]), abs(fd))
                assert rel < 1e-4, f"{name}[{k}]"

    def test_positive_return_increases_action_probability(self):
        cfg = tiny_cfg(comment_capacity=1)
        enc, env_p, agent_p = synthetic_encoding(cfg)
        state = enc.comments.data[:1].copy()
        mask = np.ones(1)
        action = np.array([1], dtype=np.intp)
        opt = Adam(agent_p.tensors().values(), lr=1e-2, maximize=True)
        trace = ag.EpisodeTrace(mask=mask, states=[state], actions=[action],
                                log_probs=[np.zeros(1)], rewards=[0.6],
                                returns=np.array([0.6]))
        tweet = Tensor(enc.tweet.data.copy())
        history = []
        for _ in range(6):
            probs = ag.policy_probs(tweet, Tensor(state), mask, agent_p)
            history.append(probs.data[0, 1])
            ag.policy_update(trace, 0, tweet, agent_p, opt)
        assert all(b > a for a, b in zip(history, history[1:]))


class TestRunEpisodes:
    def test_single_episode_shape(self):
        cfg = tiny_cfg(episodes=1)
        enc, env_p, agent_p = synthetic_encoding(cfg)
        opt = Adam(agent_p.tensors().values(), maximize=True)
        trace = ag.run_episodes(enc, env_p, agent_p, opt, 1, 0.9,
                                np.random.default_rng(0))
        assert len(trace.actions) == 1 and len(trace.rewards) == 1
        assert trace.returns.shape == (1,)
        assert abs(trace.returns[0] - trace.rewards[0]) < 1e-15

    def test_thread_without_comments_changes_nothing(self):
        cfg = tiny_cfg()
        thread = Thread(id="e", source="a b c", label="NR", comments=[])
        vocab = build_thread_vocab([thread])
        env_p, agent_p = init_params(cfg, vocab)
        enc = env.encode_thread(thread, vocab, env_p, cfg)
        before = {k: t.data.copy() for k, t in agent_p.tensors().items()}
        opt = Adam(agent_p.tensors().values(), maximize=True)
        ag.run_episodes(enc, env_p, agent_p, opt, 3, 0.9, np.random.default_rng(1))
        for k, t in agent_p.tensors().items():
            np.testing.assert_array_equal(t.data, before[k])

    def test_rewards_replayable_offline(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        opt = Adam(agent_p.tensors().values(), maximize=True)
        trace = ag.run_episodes(enc, env_p, agent_p, opt, cfg.episodes, 0.9,
                                np.random.default_rng(2))
        for k in range(cfg.episodes):
            probs = env.forward_thread(enc, trace.actions[k], env_p)
            replayed = env.reward(probs.data, enc.label_id, cfg.classes)
            assert abs(replayed - trace.rewards[k]) < 1e-12

    def test_log_probs_match_states_and_actions(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p0 = synthetic_encoding(cfg)
        agent_p = agent_p0.clone()
        opt = Adam(agent_p.tensors().values(), maximize=True)
        trace = ag.run_episodes(enc, env_p, agent_p, opt, cfg.episodes, 0.9,
                                np.random.default_rng(3))
        # recompute the first step's log-probs under the pre-update parameters
        probs = ag.policy_probs(enc.tweet, Tensor(trace.states[0]), enc.mask,
                                agent_p0)
        for n in range(int(enc.mask.sum())):
            expected = np.log(probs.data[n, trace.actions[0][n]])
            assert abs(trace.log_probs[0][n] - expected) < 1e-12

    def test_same_seed_identical_traces(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        results = []
        for _ in range(2):
            cloned = agent_p.clone()
            opt = Adam(cloned.tensors().values(), maximize=True)
            trace = ag.run_episodes(enc, env_p, cloned, opt, cfg.episodes, 0.9,
                                    np.random.default_rng(42))
            results.append((np.array(trace.actions).tobytes(),
                            np.array(trace.rewards).tobytes()))
        assert results[0] == results[1]


class TestSelectActions:
    def test_untrained_zero_head_removes_everything_greedy(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        agent_p.w6.data = np.zeros_like(agent_p.w6.data)
        agent_p.b6.data = np.zeros_like(agent_p.b6.data)
        actions = ag.select_actions(enc, env_p, agent_p, greedy=True)
        np.testing.assert_array_equal(actions, np.zeros(3, dtype=np.intp))

    def test_sampled_mode_needs_rng(self):
        cfg = tiny_cfg()
        enc, env_p, agent_p = synthetic_encoding(cfg)
        with pytest.raises(ValidationError):
            ag.select_actions(enc, env_p, agent_p, greedy=False)
