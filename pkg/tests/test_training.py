import dataclasses

import numpy as np
import pytest

from stancerl import data as dt
from stancerl import environment as env
from stancerl import training as tr
from stancerl.errors import ValidationError


def small_cfg(**kw):
    defaults = dict(d=12, d_w=12, max_len=10, comment_capacity=4, lstm_hidden=6,
                    episodes=3, epochs=2, batch_size=8, seed=17)
    defaults.update(kw)
    return tr.TrainConfig(**defaults)


def small_corpus(seed=17, threads=48):
    corpus = dt.generate(dt.SynthConfig(threads=threads, comments_per_thread=4,
                                        vocab_size=60, tokens_per_text=6,
                                        seed=seed))
    train_t, val_t, test_t = dt.split_threads(corpus, seed)
    vocab = tr.build_thread_vocab(train_t)
    return train_t, val_t, test_t, vocab


class TestConfig:
    def test_defaults_valid(self):
        assert tr.TrainConfig().validate() == []
        assert tr.TrainConfig.large().validate() == []

    def test_errors_collected_all_at_once(self):
        cfg = tr.TrainConfig(d=0, gamma=3.0, ablation="nope")
        problems = cfg.validate()
        assert len(problems) >= 3

    def test_lstm_width_must_be_half_d(self):
        cfg = tr.TrainConfig(lstm_hidden=10)
        assert any("lstm_hidden" in p for p in cfg.validate())

    def test_round_trip_dict(self):
        cfg = tr.TrainConfig(gamma=0.5, kernel_sizes=(2, 3, 4), epochs=7)
        assert tr.TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError, match="bogus"):
            tr.TrainConfig.from_dict({"bogus": 1})


class TestMetrics:
    def test_f1_diagonal_confusion(self):
        confusion = np.diag([5, 3, 2, 4])
        assert tr.f1_per_class(confusion) == [1.0, 1.0, 1.0, 1.0]

    def test_f1_absent_class_zero_by_convention(self):
        confusion = np.array([[2, 0], [0, 0]])
        assert tr.f1_per_class(confusion) == [1.0, 0.0]

    def test_f1_direct_substitution(self):
        # TP=2, FP=1, FN=0 for class 0
        confusion = np.array([[2, 0], [1, 5]])
        assert abs(tr.f1_per_class(confusion)[0] - 0.8) < 1e-12

    def test_binary_projection_hand_case(self):
        labels = [0, 0, 1, 1]
        preds = [0, 1, 1, 1]
        m = tr.metrics_from_confusion(tr.confusion_matrix(labels, preds, 2))
        assert abs(m.accuracy - 0.75) < 1e-12
        assert abs(m.f1[1] - 0.8) < 1e-12
        assert abs(m.f1[0] - 2.0 / 3.0) < 1e-12

    def test_macro_is_mean_and_accuracy_is_trace(self):
        rng = np.random.default_rng(0)
        confusion = rng.integers(0, 9, size=(4, 4))
        m = tr.metrics_from_confusion(confusion)
        assert abs(m.accuracy - np.trace(confusion) / confusion.sum()) < 1e-12
        assert abs(m.macro_f1 - np.mean(m.f1)) < 1e-12

    def test_confusion_row_sums_are_supports(self):
        labels = [0, 0, 1, 2, 3, 3]
        preds = [1, 0, 1, 2, 0, 3]
        confusion = tr.confusion_matrix(labels, preds, 4)
        np.testing.assert_array_equal(confusion.sum(axis=1), [2, 1, 1, 2])

    def test_constant_prediction_on_balanced_set_scores_chance(self):
        labels = [0, 1, 2, 3] * 10
        preds = [2] * 40
        m = tr.metrics_from_confusion(tr.confusion_matrix(labels, preds, 4))
        assert abs(m.accuracy - 0.25) < 1e-12


class TestEvaluate:
    def test_empty_split_rejected(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg()
        env_p, agent_p = tr.init_params(cfg, vocab)
        with pytest.raises(ValidationError):
            tr.evaluate(env_p, agent_p, [], vocab, cfg)

    def test_metrics_fields_complete(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg()
        env_p, agent_p = tr.init_params(cfg, vocab)
        m = tr.evaluate(env_p, agent_p, val_t, vocab, cfg)
        assert 0.0 <= m.accuracy <= 1.0
        assert len(m.f1) == 4
        assert m.confusion.sum() == len(val_t)


class TestTrain:
    def test_determinism_bit_identical(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg()
        r1 = tr.train(cfg, train_t, val_t, vocab)
        r2 = tr.train(cfg, train_t, val_t, vocab)
        assert r1.history == r2.history
        for k, t in r1.env.tensors().items():
            assert t.data.tobytes() == r2.env.tensors()[k].data.tobytes()
        for k, t in r1.agent.tensors().items():
            assert t.data.tobytes() == r2.agent.tensors()[k].data.tobytes()

    def test_no_dl_freezes_detector_bit_identical(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg(ablation="no_dl")
        result = tr.train(cfg, train_t, val_t, vocab)
        init_env, _ = tr.init_params(cfg, vocab)
        for k, t in result.env.tensors().items():
            assert t.data.tobytes() == init_env.tensors()[k].data.tobytes(), k

    def test_no_pl_freezes_policy_and_retains_all(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg(ablation="no_pl")
        result = tr.train(cfg, train_t, val_t, vocab)
        _, init_agent = tr.init_params(cfg, vocab)
        for k, t in result.agent.tensors().items():
            assert t.data.tobytes() == init_agent.tensors()[k].data.tobytes(), k
        enc = env.encode_thread(train_t[0], vocab, result.env, cfg)
        actions = tr._eval_actions(enc, result.env, result.agent, cfg)
        np.testing.assert_array_equal(actions, enc.mask.astype(np.intp))

    def test_history_schema(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg()
        result = tr.train(cfg, train_t, val_t, vocab)
        assert len(result.history) == 2 * cfg.epochs
        keys = ["epoch", "split", "loss", "accuracy", "f1_nr", "f1_fr",
                "f1_tr", "f1_ur", "macro_f1"]
        for rec in result.history:
            assert list(rec.keys()) == keys
            assert rec["split"] in ("train", "val")

    def test_alternation_balance(self):
        # even and odd batch counts differ by at most one in every epoch
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg()
        n_batches = -(-len(train_t) // cfg.batch_size)
        env_steps = (n_batches + 1) // 2
        agent_batches = n_batches // 2
        assert abs(env_steps - agent_batches) <= 1

    def test_epochs_zero_returns_initialization(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg(epochs=0)
        result = tr.train(cfg, train_t, val_t, vocab)
        init_env, init_agent = tr.init_params(cfg, vocab)
        for k, t in result.env.tensors().items():
            assert t.data.tobytes() == init_env.tensors()[k].data.tobytes()
        assert result.history == []

    def test_no_dl_loss_stays_flat(self):
        # frozen detector: the recorded training loss can move only through
        # the policy's greedy selections, never through detector updates
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg(ablation="no_dl", epochs=4)
        result = tr.train(cfg, train_t, val_t, vocab)
        losses = [r["loss"] for r in result.history if r["split"] == "train"]
        assert max(losses) - min(losses) < 0.2 * losses[0]

    def test_loss_decreases_on_learnable_corpus(self):
        corpus = dt.generate(dt.SynthConfig(threads=80, comments_per_thread=4,
                                            vocab_size=60, tokens_per_text=6,
                                            noise_rate=0.1, seed=3))
        train_t, val_t, _ = dt.split_threads(corpus, 3)
        vocab = tr.build_thread_vocab(train_t)
        cfg = small_cfg(epochs=6, batch_size=4, seed=3)
        result = tr.train(cfg, train_t, val_t, vocab)
        losses = [r["loss"] for r in result.history if r["split"] == "train"]
        assert losses[5] < losses[0]

    def test_best_checkpoint_matches_history(self):
        train_t, val_t, _, vocab = small_corpus()
        cfg = small_cfg(epochs=3)
        result = tr.train(cfg, train_t, val_t, vocab)
        val_rows = [r for r in result.history if r["split"] == "val"]
        best_row = val_rows[result.best_epoch]
        m = tr.evaluate(result.env, result.agent, val_t, vocab, cfg)
        assert m.accuracy == best_row["accuracy"]
        assert result.best_val_accuracy == best_row["accuracy"]


class TestSweep:
    def test_single_value_equals_plain_run(self):
        corpus = dt.generate(dt.SynthConfig(threads=48, comments_per_thread=4,
                                            vocab_size=60, tokens_per_text=6,
                                            seed=17))
        cfg = small_cfg(epochs=1)
        rows = tr.sweep(cfg, "gamma", [cfg.gamma], corpus)
        assert len(rows) == 1
        train_t, val_t, test_t = dt.split_threads(corpus, cfg.seed)
        vocab = tr.build_thread_vocab(train_t)
        result = tr.train(cfg, train_t, val_t, vocab)
        m = tr.evaluate(result.env, result.agent, test_t, vocab, cfg)
        assert rows[0]["accuracy"] == m.accuracy

    def test_unknown_parameter(self):
        with pytest.raises(ValidationError):
            tr.sweep(small_cfg(), "epsilon", [1.0], [])

    def test_empty_values(self):
        with pytest.raises(ValidationError):
            tr.sweep(small_cfg(), "gamma", [], [])
