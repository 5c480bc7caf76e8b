"""The stance-selection policy and its Monte-Carlo gradient training.

The policy reads the environment state (tweet vector plus current
comment matrix), encodes the real-comment rows with a bidirectional
LSTM, and emits one remove/retain distribution per comment.  Episodes
apply sampled action vectors afresh to the base representations, record
the reward after each step, and the per-step updates ascend
return-weighted log-probabilities of the taken actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import environment as env
from .autodiff import Tensor, Trace, backward, parameter
from .errors import ValidationError
from .lstm import LstmDirection, lstm_bidirectional
from .optim import Adam

ACTION_REMOVE = 0
ACTION_RETAIN = 1


@dataclass
class AgentParams:
    """Policy parameters: the two LSTM directions and the scoring head."""

    fwd: LstmDirection
    bwd: LstmDirection
    w5: Tensor  # 2d x d
    b5: Tensor  # d
    w6: Tensor  # d x 2
    b6: Tensor  # 2

    @classmethod
    def init(cls, cfg, rng: np.random.Generator) -> "AgentParams":
        d = cfg.d
        h = cfg.lstm_hidden
        return cls(
            fwd=LstmDirection.init(d, h, rng),
            bwd=LstmDirection.init(d, h, rng),
            w5=ad.glorot_uniform(rng, (2 * d, d), 2 * d, d),
            b5=parameter(np.zeros(d)),
            # the head must not start at zero: exact ties resolve to remove,
            # and an all-remove start locks detector and policy into a
            # no-stances equilibrium
            w6=ad.glorot_uniform(rng, (d, 2), d, 2),
            b6=parameter(np.zeros(2)),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {
            "lstm_fwd_wx": self.fwd.wx, "lstm_fwd_wh": self.fwd.wh, "lstm_fwd_b": self.fwd.b,
            "lstm_bwd_wx": self.bwd.wx, "lstm_bwd_wh": self.bwd.wh, "lstm_bwd_b": self.bwd.b,
            "policy_w5": self.w5, "policy_b5": self.b5,
            "policy_w6": self.w6, "policy_b6": self.b6,
        }

    def clone(self) -> "AgentParams":
        def cp(t: Tensor) -> Tensor:
            return parameter(t.data.copy())
        return AgentParams(
            fwd=LstmDirection(cp(self.fwd.wx), cp(self.fwd.wh), cp(self.fwd.b)),
            bwd=LstmDirection(cp(self.bwd.wx), cp(self.bwd.wh), cp(self.bwd.b)),
            w5=cp(self.w5), b5=cp(self.b5), w6=cp(self.w6), b6=cp(self.b6),
        )


def policy_probs(tweet: Tensor, comments_state: Tensor, mask: np.ndarray,
                 params: AgentParams) -> Tensor:
    """Per-comment remove/retain distributions, N x 2.

    Only the real-comment prefix goes through the LSTM and head, so
    padding rows can never influence a real comment's distribution;
    masked rows are reported as a constant [0.5, 0.5].
    """
    n = comments_state.shape[0]
    real = int(np.asarray(mask).sum())
    if real == 0:
        return Tensor(np.full((n, 2), 0.5))
    seq = ad.slice_rows(comments_state, 0, real) if real < n else comments_state
    hidden = lstm_bidirectional(seq, params.fwd, params.bwd)
    feats = ad.concat_cols([ad.tile_row(tweet, real), hidden])
    z3 = ad.relu(ad.add_rowvec(ad.matmul(feats, params.w5), params.b5))
    probs = ad.softmax_rows(ad.add_rowvec(ad.matmul(z3, params.w6), params.b6))
    if real < n:
        probs = ad.concat_rows([probs, Tensor(np.full((n - real, 2), 0.5))])
    return probs


def sample_actions(probs: np.ndarray, mask: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """One independent categorical draw per unmasked row; masked rows get 0."""
    p = np.asarray(probs, dtype=np.float64)
    draws = rng.random(p.shape[0])
    actions = (draws < p[:, ACTION_RETAIN]).astype(np.intp)
    actions[np.asarray(mask) == 0.0] = ACTION_REMOVE
    return actions


def greedy_actions_from_probs(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise argmax; an exact tie resolves to remove."""
    p = np.asarray(probs, dtype=np.float64)
    actions = (p[:, ACTION_RETAIN] > p[:, ACTION_REMOVE]).astype(np.intp)
    actions[np.asarray(mask) == 0.0] = ACTION_REMOVE
    return actions


def select_actions(enc: env.ThreadEncoding, env_params: env.EnvParams,
                   agent_params: AgentParams, greedy: bool = True,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """One-shot selection used at inference: present every real comment with
    its stance vector injected, then take the policy's per-comment decision.

    Reading the policy off the stance-injected state is what makes the
    decision depend on whether the label agrees with the comment text;
    the all-removed initial state carries no label information.
    """
    visible = env.apply_actions(enc.comments, enc.stance_ids,
                                enc.mask.astype(np.intp), env_params.stance_table,
                                enc.mask)
    probs = policy_probs(enc.tweet, visible, enc.mask, agent_params)
    if greedy:
        return greedy_actions_from_probs(probs.data, enc.mask)
    if rng is None:
        raise ValidationError("sampled selection needs an rng")
    return sample_actions(probs.data, enc.mask, rng)


def compute_returns(rewards: np.ndarray, gamma: float, mode: str = "literal") -> np.ndarray:
    """Per-step discounted returns over a K-step episode (k is 0-based).

    literal: the step reward scaled by the geometric series with K-k
    terms, i.e. R_k * (1 - gamma^(K-k)) / (1 - gamma), and R_k * (K-k)
    at gamma = 1.  return_to_go: the standard discounted sum of future
    rewards, sum_j gamma^(j-k) * R_j for j = k..K-1.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    k = r.shape[0]
    if mode == "literal":
        steps_left = k - np.arange(k)
        if gamma == 1.0:
            return r * steps_left
        return r * (1.0 - gamma ** steps_left) / (1.0 - gamma)
    if mode == "return_to_go":
        out = np.zeros(k)
        acc = 0.0
        for i in range(k - 1, -1, -1):
            acc = r[i] + gamma * acc
            out[i] = acc
        return out
    raise ValidationError(f"unknown return mode {mode!r}")


@dataclass
class EpisodeTrace:
    """Record of one thread's K-step interaction.

    states[k] is the comment matrix the policy read at step k (the result
    of step k-1's actions; the base matrix at k=0).  log_probs holds the
    log-probability of the action actually taken, 0 at masked positions.
    """

    mask: np.ndarray
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    log_probs: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    returns: np.ndarray | None = None


def policy_update(trace: EpisodeTrace, step: int, tweet: Tensor,
                  params: AgentParams, opt: Adam) -> None:
    """One ascent step on the return-weighted log-probability of step k's
    actions, recomputed under the current parameters.

    Masked comments are excluded from the surrogate.  When the step's
    return is exactly zero there is no objective to ascend and the
    parameters are left untouched (no optimizer-state drift).
    """
    ret = float(trace.returns[step])
    real = int(trace.mask.sum())
    if real == 0 or ret == 0.0:
        return
    state = Tensor(trace.states[step])
    actions = trace.actions[step]
    opt.zero_grad()
    with Trace() as tr:
        probs = policy_probs(tweet, state, trace.mask, params)
        logps = [ad.log(ad.pick(probs, n, int(actions[n]))) for n in range(real)]
        surrogate = ad.add_n(logps) if len(logps) > 1 else logps[0]
    backward(surrogate, tr, seed=ret)
    opt.step()
    opt.zero_grad()


def run_episodes(enc: env.ThreadEncoding, env_params: env.EnvParams,
                 params: AgentParams, opt: Adam, episodes: int, gamma: float,
                 rng: np.random.Generator, return_mode: str = "literal") -> EpisodeTrace:
    """Collect K episode steps for one thread, then apply the K policy
    updates in step order.

    The state starts from all-zero actions; each step samples an action
    vector from the current state, applies it afresh to the base
    representations, and records the resulting reward.  Environment
    parameters are read-only here, so base representations come in
    precomputed and all forwards run untaped.
    """
    if episodes < 1:
        raise ValidationError(f"episodes must be >= 1, got {episodes}")
    trace = EpisodeTrace(mask=enc.mask.copy())
    real = int(enc.mask.sum())
    n = enc.comments.shape[0]
    state = enc.comments.data.copy()
    for _ in range(episodes):
        trace.states.append(state.copy())
        probs = policy_probs(enc.tweet, Tensor(state), enc.mask, params)
        actions = sample_actions(probs.data, enc.mask, rng)
        logp = np.zeros(n)
        for i in range(real):
            logp[i] = np.log(probs.data[i, actions[i]])
        out = env.forward_thread(enc, actions, env_params)
        step_reward = env.reward(out.data, enc.label_id, out.shape[1])
        trace.actions.append(actions)
        trace.log_probs.append(logp)
        trace.rewards.append(step_reward)
        modified = env.apply_actions(enc.comments, enc.stance_ids, actions,
                                     env_params.stance_table, enc.mask)
        state = modified.data.copy()
    trace.returns = compute_returns(np.array(trace.rewards), gamma, return_mode)
    for k in range(episodes):
        policy_update(trace, k, enc.tweet, params, opt)
    return trace
