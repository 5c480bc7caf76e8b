"""Central-difference verification of reverse-mode gradients, plus the
whole-model check used by the gradcheck command."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, Trace, backward


@dataclass
class GradCheckReport:
    """Per-parameter-group maximum relative error against finite differences."""

    tol: float
    groups: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.groups.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.groups.items() if err >= self.tol]

    def lines(self) -> list[str]:
        out = []
        for name, err in self.groups.items():
            mark = "ok  " if err < self.tol else "FAIL"
            out.append(f"{mark}  {name:24s}  max rel err {err:.3e}")
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{verdict}: tolerance {self.tol:g}")
        return out


def _rel_err(g_ad: float, g_fd: float) -> float:
    return abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))


def gradcheck(loss_fn, params: dict[str, Tensor], h: float = 1e-5,
              tol: float = 1e-4, corrupt_group: str | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of loss_fn against central differences.

    loss_fn takes no arguments, reads the current parameter values, and
    returns a scalar Tensor; it must be deterministic.  The reverse-mode
    pass runs once under a trace; the finite-difference probes re-run
    loss_fn untraced with one entry perturbed by +/-h.  Entries masked
    out by a parameter's grad_mask are skipped (structurally frozen).

    corrupt_group is a test hook: the named group's reverse-mode gradient
    is shifted before comparison so the report must flag it.
    """
    for p in params.values():
        p.grad = None
    with Trace() as trace:
        loss = loss_fn()
    backward(loss, trace)

    ad_grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        ad_grads[name] = g.copy()
    if corrupt_group is not None:
        if corrupt_group not in ad_grads:
            raise KeyError(f"unknown parameter group {corrupt_group!r}")
        ad_grads[corrupt_group] = ad_grads[corrupt_group] + 0.5

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        mask = None
        if p.grad_mask is not None:
            mask = p.grad_mask.reshape(-1)
        g_ad = ad_grads[name].reshape(-1)
        worst = 0.0
        for k in range(flat.size):
            if mask is not None and not mask[k]:
                continue
            x0 = flat[k]
            flat[k] = x0 + h
            f_plus = loss_fn().item()
            flat[k] = x0 - h
            f_minus = loss_fn().item()
            flat[k] = x0
            g_fd = (f_plus - f_minus) / (2.0 * h)
            worst = max(worst, _rel_err(float(g_ad[k]), g_fd))
        report.groups[name] = worst
    for p in params.values():
        p.grad = None
    return report


def gradcheck_model(cfg, n_threads: int = 3, h: float = 1e-5, tol: float = 1e-4,
                    corrupt_group: str | None = None
                    ) -> tuple[GradCheckReport, GradCheckReport]:
    """Check the full model on a small synthetic batch: the supervised
    detector loss against every detector parameter, and the return-weighted
    policy surrogate against every policy parameter.

    Actions are held fixed for the detector check (all real comments
    retained); the policy check replays one fixed set of sampled episodes.
    """
    from . import agent as ag
    from . import environment as env
    from .data import SynthConfig, generate
    from .training import build_thread_vocab, init_params

    cfg.check()
    synth = SynthConfig(threads=n_threads, comments_per_thread=cfg.comment_capacity,
                        vocab_size=20, tokens_per_text=max(2, cfg.max_len - 2),
                        signal_strength=0.9, noise_rate=0.3, seed=cfg.seed)
    threads = generate(synth)
    vocab = build_thread_vocab(threads, cfg.min_count)
    env_p, agent_p = init_params(cfg, vocab)

    # check at a generic point: the zero-initialized output heads would make
    # predictions exactly uniform, every reward exactly 0, and several
    # gradient paths identically zero, so the comparison would be vacuous
    nudge = np.random.default_rng([cfg.seed, 8])
    for t in (env_p.cls_w4, env_p.cls_b4, agent_p.w6, agent_p.b6):
        t.data = 0.1 * nudge.standard_normal(t.shape)

    def detector_loss() -> Tensor:
        rows, labels = [], []
        for t in threads:
            enc = env.encode_thread(t, vocab, env_p, cfg)
            rows.append(env.forward_thread(enc, enc.mask.astype(np.intp), env_p))
            labels.append(enc.label_id)
        return env.env_loss(rows, labels, env_p, cfg.l2_lambda)

    env_groups = env_p.tensors()
    env_report = gradcheck(
        detector_loss, env_groups, h=h, tol=tol,
        corrupt_group=corrupt_group if corrupt_group in env_groups else None)

    # one fixed rollout per thread; states, actions, and returns are frozen
    rng = np.random.default_rng([cfg.seed, 9])
    episodes = []
    for t in threads:
        enc = env.encode_thread(t, vocab, env_p, cfg)
        if not enc.mask.sum():
            continue
        state = enc.comments.data.copy()
        states, actions, rewards = [], [], []
        for _ in range(cfg.episodes):
            states.append(state.copy())
            probs = ag.policy_probs(enc.tweet, Tensor(state), enc.mask, agent_p)
            acts = ag.sample_actions(probs.data, enc.mask, rng)
            out = env.forward_thread(enc, acts, env_p)
            rewards.append(env.reward(out.data, enc.label_id, cfg.classes))
            actions.append(acts)
            state = env.apply_actions(enc.comments, enc.stance_ids, acts,
                                      env_p.stance_table, enc.mask).data.copy()
        returns = ag.compute_returns(np.array(rewards), cfg.gamma, cfg.return_mode)
        episodes.append((enc, states, actions, returns))

    from . import autodiff as adops

    def policy_surrogate() -> Tensor:
        terms = []
        for enc, states, actions, returns in episodes:
            real = int(enc.mask.sum())
            for k, (state, acts) in enumerate(zip(states, actions)):
                probs = ag.policy_probs(enc.tweet, Tensor(state), enc.mask, agent_p)
                logps = [adops.log(adops.pick(probs, n, int(acts[n])))
                         for n in range(real)]
                step = adops.add_n(logps) if len(logps) > 1 else logps[0]
                terms.append(adops.scale(step, float(returns[k])))
        return adops.add_n(terms) if len(terms) > 1 else terms[0]

    agent_groups = agent_p.tensors()
    agent_report = gradcheck(
        policy_surrogate, agent_groups, h=h, tol=tol,
        corrupt_group=corrupt_group if corrupt_group in agent_groups else None)
    return env_report, agent_report
