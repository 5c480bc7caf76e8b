"""Thread datasets: JSON-lines ingestion, deterministic stratified
splitting, a synthetic weak-stance corpus generator, and the retain-rate
audit of a trained selection policy.

The generator builds threads whose comment texts always reflect the
comment's TRUE stance while the observed weak label is corrupted with a
configurable rate, so a selection policy can in principle spot corrupted
labels by their conflict with the text.  Stance mixtures are conditioned
on the thread's veracity, which makes the stance channel the decisive
veracity signal; the source text only narrows veracity down to a coarse
two-group storyline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import agent as ag
from . import environment as env
from .errors import ValidationError

# observed-stance distribution per veracity class, order (support, deny, query, comment)
STANCE_PROFILES = {
    "NR": (0.1, 0.1, 0.1, 0.7),
    "FR": (0.1, 0.45, 0.3, 0.15),
    "TR": (0.6, 0.1, 0.1, 0.2),
    "UR": (0.1, 0.1, 0.5, 0.3),
}

# source texts reveal only this coarse grouping, not the class itself
SOURCE_GROUP = {"NR": 0, "UR": 0, "FR": 1, "TR": 1}


@dataclass
class Comment:
    text: str
    stance: str
    corrupted: bool | None = None


@dataclass
class Thread:
    id: str
    source: str
    label: str
    comments: list[Comment] = field(default_factory=list)


@dataclass
class SynthConfig:
    threads: int = 400
    comments_per_thread: int = 8
    vocab_size: int = 200
    tokens_per_text: int = 12
    signal_strength: float = 0.9
    noise_rate: float = 0.4
    seed: int = 1

    def validate(self) -> None:
        if self.threads < 1 or self.comments_per_thread < 1 or self.tokens_per_text < 1:
            raise ValidationError("synthetic corpus counts must be positive")
        if not (0.0 <= self.signal_strength <= 1.0 and 0.0 <= self.noise_rate <= 1.0):
            raise ValidationError("signal_strength and noise_rate must lie in [0, 1]")
        if self.vocab_size < 4 * 2 + 2 * 1 + 1:
            raise ValidationError(f"vocab_size {self.vocab_size} too small to partition")


def _token_sets(cfg: SynthConfig) -> tuple[list[list[str]], list[list[str]], list[str]]:
    """Partition the vocabulary into per-stance signatures, per-group source
    signatures, and background tokens.

    A stance signature is a few stance-specific marker tokens plus a large
    pool shared by all four stances, so a single comment only partially
    reveals its stance from text and the injected stance vector stays the
    detector's sharpest per-comment evidence.  Source signatures identify
    only a two-class storyline group, never the exact veracity class.
    """
    per_stance = max(1, round(0.03 * cfg.vocab_size))
    pool_n = round(0.26 * cfg.vocab_size)
    per_group = max(1, round(0.05 * cfg.vocab_size))
    background_n = cfg.vocab_size - 4 * per_stance - pool_n - 2 * per_group
    if background_n < 1:
        raise ValidationError(f"vocab_size {cfg.vocab_size} too small to partition")
    short = {"support": "sup", "deny": "den", "query": "qry", "comment": "cmt"}
    pool = [f"sh{j:03d}" for j in range(pool_n)]
    stance_sets = [[f"{short[s]}{j:02d}" for j in range(per_stance)] + pool
                   for s in env.STANCES]
    group_sets = [[f"src{g}_{j:03d}" for j in range(per_group)] for g in (0, 1)]
    background = [f"bg{j:03d}" for j in range(background_n)]
    return stance_sets, group_sets, background


def _mix_text(rng: np.random.Generator, signature: list[str], background: list[str],
              strength: float, count: int) -> str:
    tokens = []
    for _ in range(count):
        pool = signature if rng.random() < strength else background
        tokens.append(pool[rng.integers(len(pool))])
    return " ".join(tokens)


def generate(cfg: SynthConfig) -> list[Thread]:
    """Deterministic synthetic corpus; each thread draws from its own
    seed stream (seed, thread index), so generation order is immaterial."""
    cfg.validate()
    stance_sets, group_sets, background = _token_sets(cfg)
    profiles = {v: np.array(STANCE_PROFILES[v]) for v in env.VERACITY}
    threads = []
    for i in range(cfg.threads):
        rng = np.random.default_rng([cfg.seed, i])
        veracity = env.VERACITY[rng.integers(len(env.VERACITY))]
        source = _mix_text(rng, group_sets[SOURCE_GROUP[veracity]], background,
                           cfg.signal_strength, cfg.tokens_per_text)
        comments = []
        for _ in range(cfg.comments_per_thread):
            true_stance = int(rng.choice(len(env.STANCES), p=profiles[veracity]))
            text = _mix_text(rng, stance_sets[true_stance], background,
                             cfg.signal_strength, cfg.tokens_per_text)
            if rng.random() < cfg.noise_rate:
                others = [s for s in range(len(env.STANCES)) if s != true_stance]
                observed = others[rng.integers(len(others))]
                comments.append(Comment(text=text, stance=env.STANCES[observed],
                                        corrupted=True))
            else:
                comments.append(Comment(text=text, stance=env.STANCES[true_stance],
                                        corrupted=False))
        threads.append(Thread(id=f"t{i:05d}", source=source, label=veracity,
                              comments=comments))
    return threads


_THREAD_KEYS = {"id", "source", "label", "comments"}
_COMMENT_KEYS = {"text", "stance", "corrupted"}


def _parse_thread(obj: dict, where: str) -> Thread:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: record is not an object")
    unknown = set(obj) - _THREAD_KEYS
    if unknown:
        raise ValidationError(f"{where}: unknown fields {sorted(unknown)}")
    for key in ("id", "source", "label", "comments"):
        if key not in obj:
            raise ValidationError(f"{where}: missing field {key!r}")
    if obj["label"] not in env.VERACITY_ID:
        raise ValidationError(f"{where}: unknown veracity label {obj['label']!r}")
    comments = []
    for ci, c in enumerate(obj["comments"]):
        if not isinstance(c, dict):
            raise ValidationError(f"{where}: comment {ci} is not an object")
        unknown = set(c) - _COMMENT_KEYS
        if unknown:
            raise ValidationError(f"{where}: comment {ci} has unknown fields {sorted(unknown)}")
        if "text" not in c or "stance" not in c:
            raise ValidationError(f"{where}: comment {ci} missing text or stance")
        if c["stance"] not in env.STANCE_ID:
            raise ValidationError(f"{where}: comment {ci} has unknown stance {c['stance']!r}")
        corrupted = c.get("corrupted")
        if corrupted is not None and not isinstance(corrupted, bool):
            raise ValidationError(f"{where}: comment {ci} corrupted flag must be boolean")
        comments.append(Comment(text=str(c["text"]), stance=c["stance"], corrupted=corrupted))
    return Thread(id=str(obj["id"]), source=str(obj["source"]), label=obj["label"],
                  comments=comments)


def load_threads(path) -> list[Thread]:
    """Parse a JSON-lines thread file; errors carry the line number."""
    threads = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            threads.append(_parse_thread(obj, f"{path}:{lineno}"))
    return threads


def save_threads(threads: Iterable[Thread], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in threads:
            comments = []
            for c in t.comments:
                obj = {"text": c.text, "stance": c.stance}
                if c.corrupted is not None:
                    obj["corrupted"] = c.corrupted
                comments.append(obj)
            fh.write(json.dumps({"id": t.id, "source": t.source, "label": t.label,
                                 "comments": comments}) + "\n")


def _largest_remainder(counts: dict[str, int], target: int) -> dict[str, int]:
    total = sum(counts.values())
    if total == 0 or target == 0:
        return {c: 0 for c in counts}
    quotas = {c: target * m / total for c, m in counts.items()}
    alloc = {c: int(np.floor(q)) for c, q in quotas.items()}
    alloc = {c: min(a, counts[c]) for c, a in alloc.items()}
    short = target - sum(alloc.values())
    order = sorted(counts, key=lambda c: (-(quotas[c] - np.floor(quotas[c])), c))
    i = 0
    while short > 0:
        c = order[i % len(order)]
        if alloc[c] < counts[c]:
            alloc[c] += 1
            short -= 1
        i += 1
    return alloc


def split_threads(threads: list[Thread], seed: int) -> tuple[list[Thread], list[Thread], list[Thread]]:
    """Seeded shuffle, then 10% validation and a 3:1 train:test split of the
    rest (validation and test sizes round down), stratified by veracity."""
    n = len(threads)
    if n < 8:
        raise ValidationError(f"need at least 8 threads to split, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [threads[i] for i in order]

    val_target = n // 10
    test_target = (n - val_target) // 4

    by_class: dict[str, list[int]] = {c: [] for c in env.VERACITY}
    for idx, t in enumerate(shuffled):
        by_class[t.label].append(idx)

    assign = ["train"] * n
    counts = {c: len(ix) for c, ix in by_class.items()}
    val_alloc = _largest_remainder(counts, val_target)
    taken = {c: 0 for c in by_class}
    for c, ix in by_class.items():
        for k in range(val_alloc[c]):
            assign[ix[k]] = "val"
        taken[c] = val_alloc[c]
    rest_counts = {c: counts[c] - val_alloc[c] for c in counts}
    test_alloc = _largest_remainder(rest_counts, test_target)
    for c, ix in by_class.items():
        for k in range(taken[c], taken[c] + test_alloc[c]):
            assign[ix[k]] = "test"

    train = [t for t, a in zip(shuffled, assign) if a == "train"]
    val = [t for t, a in zip(shuffled, assign) if a == "val"]
    test = [t for t, a in zip(shuffled, assign) if a == "test"]
    return train, val, test


@dataclass
class AuditReport:
    """Retain rates of the selection policy on clean vs corrupted labels."""

    clean_total: int
    clean_retained: int
    corrupted_total: int
    corrupted_retained: int

    @property
    def clean_rate(self) -> float | None:
        return self.clean_retained / self.clean_total if self.clean_total else None

    @property
    def corrupted_rate(self) -> float | None:
        return self.corrupted_retained / self.corrupted_total if self.corrupted_total else None

    @property
    def gap(self) -> float | None:
        if self.clean_rate is None or self.corrupted_rate is None:
            return None
        return self.clean_rate - self.corrupted_rate

    def to_dict(self) -> dict:
        return {
            "clean_total": self.clean_total,
            "clean_retained": self.clean_retained,
            "clean_retain_rate": self.clean_rate,
            "corrupted_total": self.corrupted_total,
            "corrupted_retained": self.corrupted_retained,
            "corrupted_retain_rate": self.corrupted_rate,
            "gap": self.gap,
        }


def agent_audit(env_params, agent_params, vocab, cfg, threads: list[Thread],
                mode: str = "greedy", rng: np.random.Generator | None = None) -> AuditReport:
    """Selection decisions per comment, grouped by the corruption flag.

    Decisions come from the policy's one-shot selection protocol (greedy
    by default; mode="sampled" draws from the distributions instead).
    Threads must carry corruption flags.
    """
    if mode not in ("greedy", "sampled"):
        raise ValidationError(f"unknown audit mode {mode!r}")
    if mode == "sampled" and rng is None:
        rng = np.random.default_rng(0)
    report = AuditReport(0, 0, 0, 0)
    for t in threads:
        enc = env.encode_thread(t, vocab, env_params, cfg)
        actions = ag.select_actions(enc, env_params, agent_params,
                                    greedy=(mode == "greedy"), rng=rng)
        kept = t.comments[:cfg.comment_capacity]
        for i, c in enumerate(kept):
            if c.corrupted is None:
                raise ValidationError(
                    f"thread {t.id}: comment {i} has no corruption flag; audit needs synthetic ground truth")
            if c.corrupted:
                report.corrupted_total += 1
                report.corrupted_retained += int(actions[i])
            else:
                report.clean_total += 1
                report.clean_retained += int(actions[i])
    return report
