"""Alternating optimization of the detector and the selection policy,
plus evaluation metrics and the sensitivity sweep.

Mini-batches alternate by index: even batches take one supervised
descent step on the detector (with the policy's greedy selections held
fixed), odd batches run K-step policy episodes per thread with the
detector frozen.  Ablations: no_dl never updates the detector, no_pl
never updates the policy and forces every real comment to be retained.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import agent as ag
from . import environment as env
from . import text as tx
from .autodiff import Trace, backward, suspend_trace
from .data import Thread, split_threads
from .errors import NumericError, ValidationError
from .optim import Adam

ABLATIONS = ("full", "no_pl", "no_dl")
RETURN_MODES = ("literal", "return_to_go")


@dataclass
class TrainConfig:
    """Model and optimization settings; defaults are the desk-scale
    configuration used by the tests."""

    d: int = 48
    d_w: int = 48
    max_len: int = 20
    comment_capacity: int = 8
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    lstm_hidden: int = 24
    classes: int = 4
    episodes: int = 10
    gamma: float = 0.95
    l2_lambda: float = 1e-5
    lr: float = 1e-3
    lr_decay: float = 0.95
    batch_size: int = 64
    epochs: int = 10
    return_mode: str = "literal"
    ablation: str = "full"
    min_count: int = 1
    seed: int = 1

    @classmethod
    def large(cls) -> "TrainConfig":
        """Production-scale preset: 300-wide embeddings and encoder,
        100 kernels per size, length-50 texts."""
        return cls(d=300, d_w=300, max_len=50, lstm_hidden=150)

    def validate(self) -> list[str]:
        problems = []
        for name in ("d", "d_w", "max_len", "comment_capacity", "classes",
                     "episodes", "batch_size", "min_count"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if not self.kernel_sizes:
            problems.append("kernel_sizes must be non-empty")
        elif self.d % len(self.kernel_sizes) != 0:
            problems.append(f"d={self.d} not divisible by {len(self.kernel_sizes)} kernel sizes")
        if any(k < 1 for k in self.kernel_sizes):
            problems.append(f"kernel sizes must be >= 1, got {self.kernel_sizes}")
        if any(k > self.max_len for k in self.kernel_sizes):
            problems.append(f"kernel sizes {self.kernel_sizes} exceed max_len {self.max_len}")
        if 2 * self.lstm_hidden != self.d:
            problems.append(f"lstm_hidden must be d/2 so the policy feature width is 2d "
                            f"(got {self.lstm_hidden}, d={self.d})")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append(f"gamma must be in [0, 1], got {self.gamma}")
        if self.l2_lambda < 0:
            problems.append(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.lr <= 0 or self.lr_decay <= 0:
            problems.append("lr and lr_decay must be positive")
        if self.return_mode not in RETURN_MODES:
            problems.append(f"return_mode must be one of {RETURN_MODES}, got {self.return_mode!r}")
        if self.ablation not in ABLATIONS:
            problems.append(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        return problems

    def check(self) -> None:
        problems = self.validate()
        if problems:
            raise ValidationError("; ".join(problems))

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if "kernel_sizes" in kwargs:
            kwargs["kernel_sizes"] = tuple(kwargs["kernel_sizes"])
        return cls(**kwargs)


@dataclass
class Metrics:
    accuracy: float
    f1: list[float]
    macro_f1: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        out = {"accuracy": self.accuracy}
        for name, score in zip(env.VERACITY, self.f1):
            out[f"f1_{name.lower()}"] = score
        out["macro_f1"] = self.macro_f1
        out["confusion"] = self.confusion.tolist()
        return out


def confusion_matrix(true_ids: Iterable[int], pred_ids: Iterable[int],
                     n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(true_ids, pred_ids):
        m[t, p] += 1
    return m


def f1_per_class(confusion: np.ndarray) -> list[float]:
    """F1 = 2TP / (2TP + FP + FN) per class, defined as 0 when the
    denominator vanishes."""
    c = np.asarray(confusion)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError(f"confusion matrix must be square, got {c.shape}")
    scores = []
    for k in range(c.shape[0]):
        tp = c[k, k]
        fp = c[:, k].sum() - tp
        fn = c[k, :].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(float(2 * tp / denom) if denom > 0 else 0.0)
    return scores


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    c = np.asarray(confusion)
    total = c.sum()
    f1 = f1_per_class(c)
    return Metrics(accuracy=float(np.trace(c) / total) if total else 0.0,
                   f1=f1, macro_f1=float(np.mean(f1)), confusion=c)


def build_thread_vocab(threads: list[Thread], min_count: int = 1) -> tx.Vocab:
    def texts():
        for t in threads:
            yield t.source
            for c in t.comments:
                yield c.text
    return tx.build_vocab(texts(), min_count=min_count)


def init_params(cfg: TrainConfig, vocab: tx.Vocab,
                pretrained: tx.EmbeddingTable | None = None
                ) -> tuple[env.EnvParams, ag.AgentParams]:
    """Seed-derived parameter initialization shared by training and tests."""
    env_p = env.EnvParams.init(cfg, vocab, np.random.default_rng([cfg.seed, 0]))
    agent_p = ag.AgentParams.init(cfg, np.random.default_rng([cfg.seed, 1]))
    if pretrained is not None:
        if pretrained.dim != cfg.d_w or pretrained.vocab_size != vocab.size:
            raise ValidationError(
                f"pretrained embeddings are {pretrained.vocab_size} x {pretrained.dim}, "
                f"config expects {vocab.size} x {cfg.d_w}")
        env_p.embedding = pretrained
    return env_p, agent_p


def _eval_actions(enc: env.ThreadEncoding, env_p: env.EnvParams,
                  agent_p: ag.AgentParams, cfg: TrainConfig) -> np.ndarray:
    if cfg.ablation == "no_pl":
        return enc.mask.astype(np.intp)
    return ag.select_actions(enc, env_p, agent_p, greedy=True)


def evaluate(env_p: env.EnvParams, agent_p: ag.AgentParams, threads: list[Thread],
             vocab: tx.Vocab, cfg: TrainConfig) -> Metrics:
    """Greedy selection, one environment forward per thread, argmax class."""
    if not threads:
        raise ValidationError("cannot evaluate an empty split")
    trues, preds = [], []
    for t in threads:
        enc = env.encode_thread(t, vocab, env_p, cfg)
        actions = _eval_actions(enc, env_p, agent_p, cfg)
        probs = env.forward_thread(enc, actions, env_p)
        trues.append(enc.label_id)
        preds.append(int(np.argmax(probs.data[0])))
    return metrics_from_confusion(confusion_matrix(trues, preds, cfg.classes))


def _split_loss(threads: list[Thread], env_p, agent_p, vocab, cfg) -> float:
    rows, labels = [], []
    for t in threads:
        enc = env.encode_thread(t, vocab, env_p, cfg)
        actions = _eval_actions(enc, env_p, agent_p, cfg)
        rows.append(env.forward_thread(enc, actions, env_p))
        labels.append(enc.label_id)
    return env.env_loss(rows, labels, env_p, cfg.l2_lambda).item()


def _env_batch(batch: list[Thread], env_p, agent_p, vocab, cfg,
               opt: Adam, update: bool) -> float:
    """One supervised step (or a forward-only loss when update is off)."""
    if not update:
        return _split_loss(batch, env_p, agent_p, vocab, cfg)
    opt.zero_grad()
    with Trace() as trace:
        rows, labels = [], []
        for t in batch:
            enc = env.encode_thread(t, vocab, env_p, cfg)
            with suspend_trace():
                actions = _eval_actions(enc, env_p, agent_p, cfg)
            rows.append(env.forward_thread(enc, actions, env_p))
            labels.append(enc.label_id)
        loss = env.env_loss(rows, labels, env_p, cfg.l2_lambda)
    backward(loss, trace)
    opt.step()
    opt.zero_grad()
    return loss.item()


def _history_record(epoch: int, split: str, loss: float, metrics: Metrics) -> dict:
    rec = {"epoch": epoch, "split": split, "loss": loss,
           "accuracy": metrics.accuracy}
    for name, score in zip(env.VERACITY, metrics.f1):
        rec[f"f1_{name.lower()}"] = score
    rec["macro_f1"] = metrics.macro_f1
    return rec


@dataclass
class TrainResult:
    env: env.EnvParams
    agent: ag.AgentParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")
    reward_min: float = float("inf")
    reward_max: float = float("-inf")


def train(cfg: TrainConfig, train_threads: list[Thread], val_threads: list[Thread],
          vocab: tx.Vocab, pretrained: tx.EmbeddingTable | None = None) -> TrainResult:
    """Run the alternating loop and return the parameters with the best
    validation accuracy (the initialization when epochs is 0)."""
    cfg.check()
    if not train_threads:
        raise ValidationError("training set is empty")
    env_p, agent_p = init_params(cfg, vocab, pretrained)
    opt1 = Adam(env_p.tensors().values(), lr=cfg.lr)
    opt2 = Adam(agent_p.tensors().values(), lr=cfg.lr, maximize=True)
    shuffle_rng = np.random.default_rng([cfg.seed, 2])
    episode_rng = np.random.default_rng([cfg.seed, 3])

    result = TrainResult(env=env_p.clone(), agent=agent_p.clone())
    best_acc = float("-inf")
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_threads))
        env_losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_threads[i] for i in order[start:start + cfg.batch_size]]
            try:
                if bi % 2 == 0:
                    env_losses.append(_env_batch(
                        batch, env_p, agent_p, vocab, cfg, opt1,
                        update=cfg.ablation != "no_dl"))
                elif cfg.ablation != "no_pl":
                    for t in batch:
                        enc = env.encode_thread(t, vocab, env_p, cfg)
                        trace = ag.run_episodes(enc, env_p, agent_p, opt2,
                                                cfg.episodes, cfg.gamma,
                                                episode_rng, cfg.return_mode)
                        if trace.rewards:
                            result.reward_min = min(result.reward_min, min(trace.rewards))
                            result.reward_max = max(result.reward_max, max(trace.rewards))
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {bi}: {e}") from e

        train_metrics = evaluate(env_p, agent_p, train_threads, vocab, cfg)
        result.history.append(_history_record(
            epoch, "train", float(np.mean(env_losses)), train_metrics))
        if val_threads:
            val_metrics = evaluate(env_p, agent_p, val_threads, vocab, cfg)
            val_loss = _split_loss(val_threads, env_p, agent_p, vocab, cfg)
            result.history.append(_history_record(epoch, "val", val_loss, val_metrics))
            current = val_metrics.accuracy
        else:
            current = float(epoch)  # no validation signal: keep the latest
        if current > best_acc:
            best_acc = current
            result.env = env_p.clone()
            result.agent = agent_p.clone()
            result.best_epoch = epoch
            result.best_val_accuracy = current if val_threads else float("nan")
        opt1.lr *= cfg.lr_decay
        opt2.lr *= cfg.lr_decay
    return result


SWEEP_PARAMETERS = ("gamma", "lambda")


def sweep(cfg: TrainConfig, parameter: str, values: list[float],
          threads: list[Thread]) -> list[dict]:
    """Train and evaluate once per value with the same seed and split;
    returns one plot-ready row per value."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValidationError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, "
                              f"got {parameter!r}")
    if not values:
        raise ValidationError("sweep needs at least one value")
    train_t, val_t, test_t = split_threads(threads, cfg.seed)
    vocab = build_thread_vocab(train_t, cfg.min_count)
    rows = []
    for v in values:
        sub = replace(cfg, gamma=v) if parameter == "gamma" else replace(cfg, l2_lambda=v)
        result = train(sub, train_t, val_t, vocab)
        metrics = evaluate(result.env, result.agent, test_t, vocab, sub)
        row = {"parameter": parameter, "value": v}
        row.update({k: val for k, val in metrics.to_dict().items() if k != "confusion"})
        rows.append(row)
    return rows
