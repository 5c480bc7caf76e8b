"""Self-describing binary checkpoints.

Layout: an 8-byte magic ("STCKPT01"), a little-endian uint64 header
length, a UTF-8 JSON header, then the raw parameter payload.  The header
carries the config echo, the vocabulary in id order, and the ordered
parameter manifest (name and shape); the payload is each parameter's
row-major values as little-endian float64, concatenated in manifest
order.  Identical runs therefore produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import agent as ag
from . import environment as env
from . import text as tx
from .errors import ValidationError
from .training import TrainConfig, init_params

MAGIC = b"STCKPT01"


def save_checkpoint(path, cfg: TrainConfig, vocab: tx.Vocab,
                    env_params: env.EnvParams, agent_params: ag.AgentParams) -> None:
    named = [("env." + k, t) for k, t in env_params.tensors().items()]
    named += [("agent." + k, t) for k, t in agent_params.tensors().items()]
    header = {
        "format": "stancerl-checkpoint",
        "version": 1,
        "config": cfg.to_dict(),
        "vocab": vocab.tokens,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in named],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[TrainConfig, tx.Vocab, env.EnvParams, ag.AgentParams]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValidationError(f"{path}: not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise ValidationError(f"{path}: corrupt checkpoint header") from None
        if header.get("format") != "stancerl-checkpoint" or header.get("version") != 1:
            raise ValidationError(f"{path}: unsupported checkpoint format/version")
        cfg = TrainConfig.from_dict(header["config"])
        cfg.check()
        vocab_tokens = header["vocab"]
        if vocab_tokens[:2] != [tx.PAD_TOKEN, tx.UNK_TOKEN]:
            raise ValidationError(f"{path}: checkpoint vocabulary lacks PAD/UNK rows")
        vocab = tx.Vocab(tokens=list(vocab_tokens),
                         token_to_id={t: i for i, t in enumerate(vocab_tokens)})
        env_params, agent_params = init_params(cfg, vocab)
        named = {}
        named.update({"env." + k: t for k, t in env_params.tensors().items()})
        named.update({"agent." + k: t for k, t in agent_params.tensors().items()})
        manifest = header["params"]
        if set(named) != {p["name"] for p in manifest}:
            raise ValidationError(f"{path}: checkpoint parameter set does not match config")
        for entry in manifest:
            t = named[entry["name"]]
            shape = tuple(entry["shape"])
            if t.shape != shape:
                raise ValidationError(
                    f"{path}: parameter {entry['name']} has shape {shape}, "
                    f"config implies {t.shape}")
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValidationError(f"{path}: truncated payload at {entry['name']}")
            t.data = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return cfg, vocab, env_params, agent_params
