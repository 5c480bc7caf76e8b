"""The detection environment: stance injection, attention fusion over
comments, veracity classification, supervised loss, and the reward.

Actions are absolute per-comment retain/remove bits applied to the base
comment representations; the reward is the probability assigned to the
true class minus chance level, so a uniform prediction earns exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import text as tx
from .autodiff import Tensor, parameter
from .errors import ShapeError, ValidationError

STANCES = ("support", "deny", "query", "comment")
STANCE_ID = {s: i for i, s in enumerate(STANCES)}
VERACITY = ("NR", "FR", "TR", "UR")
VERACITY_ID = {v: i for i, v in enumerate(VERACITY)}
NUM_CLASSES = len(VERACITY)


@dataclass
class EnvParams:
    """All detector-side parameters: shared text encoder, stance table,
    attention, and classifier head."""

    embedding: tx.EmbeddingTable
    encoder: tx.EncoderParams
    stance_table: Tensor  # 4 x d, one row per stance class
    attn_w1: Tensor       # 4d x d
    attn_b1: Tensor       # d
    attn_w2: Tensor       # d x 1
    attn_b2: Tensor       # 1
    cls_w3: Tensor        # 2d x d
    cls_b3: Tensor        # d
    cls_w4: Tensor        # d x r
    cls_b4: Tensor        # r

    @classmethod
    def init(cls, cfg, vocab: tx.Vocab, rng: np.random.Generator) -> "EnvParams":
        d = cfg.d
        emb = tx.EmbeddingTable.random_init(vocab.size, cfg.d_w, rng)
        enc = tx.EncoderParams.init(d, cfg.d_w, cfg.kernel_sizes, rng)
        return cls(
            embedding=emb,
            encoder=enc,
            stance_table=parameter(rng.normal(0.0, 0.1, size=(len(STANCES), d))),
            attn_w1=ad.glorot_uniform(rng, (4 * d, d), 4 * d, d),
            attn_b1=parameter(np.zeros(d)),
            attn_w2=ad.glorot_uniform(rng, (d, 1), d, 1),
            # the gate bias starts open: the single-unit ReLU attention dies
            # irrecoverably on roughly half the seeds when started at zero,
            # cutting the whole comment channel out of the model
            attn_b2=parameter(np.ones(1)),
            cls_w3=ad.glorot_uniform(rng, (2 * d, d), 2 * d, d),
            cls_b3=parameter(np.zeros(d)),
            # zero-initialized output layer: the initial prediction is exactly
            # uniform, so an untrained detector sits at chance level
            cls_w4=parameter(np.zeros((d, cfg.classes))),
            cls_b4=parameter(np.zeros(cfg.classes)),
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding.weights}
        out.update(self.encoder.tensors())
        out.update({
            "stance_table": self.stance_table,
            "attn_w1": self.attn_w1, "attn_b1": self.attn_b1,
            "attn_w2": self.attn_w2, "attn_b2": self.attn_b2,
            "cls_w3": self.cls_w3, "cls_b3": self.cls_b3,
            "cls_w4": self.cls_w4, "cls_b4": self.cls_b4,
        })
        return out

    def clone(self) -> "EnvParams":
        emb = tx.EmbeddingTable(parameter(self.embedding.weights.data.copy()))
        enc = tx.EncoderParams(
            kernel_sizes=self.encoder.kernel_sizes,
            banks=[parameter(b.data.copy()) for b in self.encoder.banks])
        return EnvParams(
            embedding=emb, encoder=enc,
            stance_table=parameter(self.stance_table.data.copy()),
            attn_w1=parameter(self.attn_w1.data.copy()),
            attn_b1=parameter(self.attn_b1.data.copy()),
            attn_w2=parameter(self.attn_w2.data.copy()),
            attn_b2=parameter(self.attn_b2.data.copy()),
            cls_w3=parameter(self.cls_w3.data.copy()),
            cls_b3=parameter(self.cls_b3.data.copy()),
            cls_w4=parameter(self.cls_w4.data.copy()),
            cls_b4=parameter(self.cls_b4.data.copy()),
        )


@dataclass
class ThreadEncoding:
    """Base representations of one thread at comment capacity N: the source
    vector, the N x d comment matrix (zero rows past the real comments),
    stance ids, and the real-comment mask."""

    tweet: Tensor            # 1 x d
    comments: Tensor         # N x d
    stance_ids: np.ndarray   # N, int
    mask: np.ndarray         # N, float 0/1
    label_id: int


def encode_thread(thread, vocab: tx.Vocab, params: EnvParams, cfg) -> ThreadEncoding:
    """Encode source and comments; keep the earliest N comments, pad the
    rest with zero rows, mask 0."""
    n_cap = cfg.comment_capacity
    tweet = tx.encode_text(
        tx.pad_truncate(vocab.encode(tx.tokenize(thread.source)), cfg.max_len),
        params.embedding, params.encoder)
    kept = thread.comments[:n_cap]
    rows = []
    for c in kept:
        rows.append(tx.encode_text(
            tx.pad_truncate(vocab.encode(tx.tokenize(c.text)), cfg.max_len),
            params.embedding, params.encoder))
    if len(kept) < n_cap:
        rows.append(Tensor(np.zeros((n_cap - len(kept), cfg.d))))
    comments = ad.concat_rows(rows) if len(rows) > 1 else rows[0]
    stance_ids = np.zeros(n_cap, dtype=np.intp)
    for i, c in enumerate(kept):
        if c.stance not in STANCE_ID:
            raise ValidationError(f"unknown stance {c.stance!r}")
        stance_ids[i] = STANCE_ID[c.stance]
    mask = np.zeros(n_cap)
    mask[:len(kept)] = 1.0
    if thread.label not in VERACITY_ID:
        raise ValidationError(f"unknown veracity label {thread.label!r}")
    return ThreadEncoding(tweet=tweet, comments=comments, stance_ids=stance_ids,
                          mask=mask, label_id=VERACITY_ID[thread.label])


def apply_actions(comments: Tensor, stance_ids: np.ndarray, actions: np.ndarray,
                  stance_table: Tensor, mask: np.ndarray) -> Tensor:
    """Inject the stance vector into every retained comment row:
    row n becomes c_n + A_n * S[stance_n].  Masked rows must carry
    action 0 and stay zero."""
    a = np.asarray(actions, dtype=np.float64)
    if a.shape != (comments.shape[0],):
        raise ShapeError(f"actions shape {a.shape} vs {comments.shape[0]} comments")
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValidationError("actions must be 0 or 1")
    if np.any(a * (1.0 - np.asarray(mask)) != 0.0):
        raise ValidationError("masked comments must carry action 0")
    if not np.any(a):
        return comments
    stance_rows = ad.take_rows(stance_table, stance_ids)
    return ad.add(comments, ad.scale_rows(stance_rows, a))


def attend(tweet: Tensor, modified: Tensor, mask: np.ndarray, params: EnvParams) -> Tensor:
    """Fuse the comment rows into one vector with ReLU-gated attention.

    The attention weights use ReLU, not softmax, so they are nonnegative
    but unnormalized and may all be zero; masked rows are forced to
    weight 0 and cannot influence the output.
    """
    n = modified.shape[0]
    tiled = ad.tile_row(tweet, n)
    feats = ad.concat_cols([tiled, modified, ad.sub(tiled, modified),
                            ad.mul(tiled, modified)])
    z1 = ad.relu(ad.add_rowvec(ad.matmul(feats, params.attn_w1), params.attn_b1))
    alpha = ad.relu(ad.add_rowvec(ad.matmul(z1, params.attn_w2), params.attn_b2))
    alpha = ad.scale_rows(alpha, mask)
    return ad.matmul(ad.transpose(alpha), modified)


def classify(tweet: Tensor, fused: Tensor, params: EnvParams) -> Tensor:
    """Class probabilities (1 x r) from the tweet and fused comment vector."""
    z2 = ad.relu(ad.add_rowvec(
        ad.matmul(ad.concat_cols([tweet, fused]), params.cls_w3), params.cls_b3))
    logits = ad.add_rowvec(ad.matmul(z2, params.cls_w4), params.cls_b4)
    return ad.softmax_rows(logits)


def forward_thread(enc: ThreadEncoding, actions: np.ndarray, params: EnvParams) -> Tensor:
    """Full environment forward for one thread under the given actions."""
    modified = apply_actions(enc.comments, enc.stance_ids, actions,
                             params.stance_table, enc.mask)
    fused = attend(enc.tweet, modified, enc.mask, params)
    return classify(enc.tweet, fused, params)


@dataclass
class EnvState:
    """Environment state after receiving an action vector."""

    tweet: Tensor
    comments: Tensor
    stance_ids: np.ndarray
    actions: np.ndarray
    mask: np.ndarray
    modified: Tensor

    @classmethod
    def build(cls, enc: ThreadEncoding, actions: np.ndarray,
              params: EnvParams) -> "EnvState":
        modified = apply_actions(enc.comments, enc.stance_ids, actions,
                                 params.stance_table, enc.mask)
        return cls(tweet=enc.tweet, comments=enc.comments, stance_ids=enc.stance_ids,
                   actions=np.asarray(actions).copy(), mask=enc.mask, modified=modified)


def env_loss(prob_rows: list[Tensor], label_ids: list[int], params: EnvParams,
             l2_lambda: float) -> Tensor:
    """Cross-entropy averaged over the batch plus one (lambda/2)*||theta||^2
    penalty over every environment parameter."""
    if l2_lambda < 0:
        raise ValidationError(f"l2_lambda must be >= 0, got {l2_lambda}")
    if len(prob_rows) != len(label_ids) or not prob_rows:
        raise ValidationError("env_loss needs one label per probability row")
    ce_terms = [ad.log(ad.pick(p, 0, y)) for p, y in zip(prob_rows, label_ids)]
    loss = ad.scale(ad.add_n(ce_terms), -1.0 / len(ce_terms))
    if l2_lambda > 0:
        sq = [ad.sum_all(ad.mul(t, t)) for t in params.tensors().values()]
        loss = ad.add(loss, ad.scale(ad.add_n(sq), l2_lambda / 2.0))
    return loss


def reward(probs: np.ndarray, label_id: int, n_classes: int = NUM_CLASSES) -> float:
    """Probability of the true class minus chance level 1/r."""
    p = np.asarray(probs, dtype=np.float64).reshape(-1)
    if p.shape[0] != n_classes:
        raise ShapeError(f"expected {n_classes} probabilities, got {p.shape[0]}")
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < 0):
        raise ValidationError("reward needs a valid probability distribution")
    return float(p[label_id]) - 1.0 / n_classes
