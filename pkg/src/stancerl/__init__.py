"""Rumor detection with reinforcement-learned selection of weak stance labels.

A convolutional text encoder plus attention-fused classifier (the
environment) is trained jointly with a BiLSTM retain/remove policy (the
agent): supervised descent steps and Monte-Carlo policy-gradient ascent
steps alternate per mini-batch.  A synthetic benchmark generator with
controllable stance-label corruption makes the selection behaviour
verifiable at desk scale.
"""

from .agent import (AgentParams, EpisodeTrace, compute_returns, policy_probs,
                    policy_update, run_episodes, sample_actions, select_actions)
from .autodiff import Tensor, Trace, backward, parameter
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (AuditReport, Comment, SynthConfig, Thread, agent_audit,
                   generate, load_threads, save_threads, split_threads)
from .environment import (STANCES, VERACITY, EnvParams, EnvState, ThreadEncoding,
                          apply_actions, attend, classify, encode_thread, env_loss,
                          forward_thread, reward)
from .errors import NumericError, ShapeError, StanceRLError, ValidationError
from .gradcheck import GradCheckReport, gradcheck, gradcheck_model
from .lstm import LstmDirection, lstm_bidirectional
from .optim import Adam
from .text import (EmbeddingTable, EncoderParams, Vocab, build_vocab, encode_text,
                   load_pretrained, pad_truncate, tokenize)
from .training import (Metrics, TrainConfig, TrainResult, build_thread_vocab,
                       evaluate, f1_per_class, init_params, metrics_from_confusion,
                       sweep, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AgentParams", "AuditReport", "Comment", "EmbeddingTable",
    "EncoderParams", "EnvParams", "EnvState", "EpisodeTrace", "GradCheckReport",
    "LstmDirection", "Metrics", "NumericError", "STANCES", "ShapeError",
    "StanceRLError", "SynthConfig", "Tensor", "Thread", "ThreadEncoding",
    "Trace", "TrainConfig", "TrainResult", "VERACITY", "ValidationError",
    "Vocab", "agent_audit", "apply_actions", "attend", "backward",
    "build_thread_vocab", "build_vocab", "classify", "compute_returns",
    "encode_text", "encode_thread", "env_loss", "evaluate", "f1_per_class",
    "forward_thread", "generate", "gradcheck", "gradcheck_model", "init_params",
    "load_checkpoint", "load_pretrained", "load_threads", "lstm_bidirectional",
    "metrics_from_confusion", "pad_truncate", "parameter", "policy_probs",
    "policy_update", "reward", "run_episodes", "sample_actions", "save_checkpoint",
    "save_threads", "select_actions", "split_threads", "sweep", "tokenize", "train",
]
