"""Binary policy checkpoints.

Layout (little-endian)::

    8s   magic  b"REACHCKP"
    u32  format version
    u32  obs_dim, u32 act_dim, u32 hidden layer count, u32 x count hidden sizes
    u64  seed, u64 update counter
    u32  curriculum region index (zero-based), u32 flags (bit 0: optimizer state follows)
    u64  parameter count P, then P f64: actor, log_std, critic, normalizer mean, variance, count
    if flag bit 0:  u64 Adam step, then 2 x |theta| f64 (first and second moments)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .policy import GaussianPolicy, RunningNorm
from .ppo import Adam

MAGIC = b"REACHCKP"
VERSION = 1
HAS_OPTIMIZER = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    policy: GaussianPolicy
    norm: RunningNorm
    seed: int = 0
    update: int = 0
    region: int = 0
    adam: Adam | None = None


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    p = ckpt.policy
    flags = HAS_OPTIMIZER if ckpt.adam is not None else 0
    header = struct.pack("<8sIIII", MAGIC, VERSION, p.obs_dim, p.act_dim, len(p.hidden))
    header += struct.pack(f"<{len(p.hidden)}I", *p.hidden)
    header += struct.pack("<QQII", ckpt.seed, ckpt.update, ckpt.region, flags)
    params = np.concatenate([p.theta, ckpt.norm.mean, ckpt.norm.var, [ckpt.norm.count]]).astype("<f8")
    body = struct.pack("<Q", params.size) + params.tobytes()
    if ckpt.adam is not None:
        body += struct.pack("<Q", ckpt.adam.t) + ckpt.adam.m.astype("<f8").tobytes() + ckpt.adam.v.astype("<f8").tobytes()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + body)
    tmp.replace(path)


def load_checkpoint(path: str | Path, lr: float = 3e-4) -> Checkpoint:
    data = Path(path).read_bytes()
    try:
        magic, version, obs_dim, act_dim, n_hidden = struct.unpack_from("<8sIIII", data, 0)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a policy checkpoint")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        off = 24
        hidden = struct.unpack_from(f"<{n_hidden}I", data, off)
        off += 4 * n_hidden
        seed, update, region, flags = struct.unpack_from("<QQII", data, off)
        off += 24
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
        params = np.frombuffer(data, "<f8", count, off).astype(float)
        off += 8 * count
        policy = GaussianPolicy(obs_dim, act_dim, hidden)
        if count != policy.theta.size + 2 * obs_dim + 1:
            raise CheckpointError(f"{path}: parameter count {count} does not match the stored architecture")
        k = policy.theta.size
        policy.theta[:] = params[:k]
        norm = RunningNorm(params[k : k + obs_dim].copy(), params[k + obs_dim : k + 2 * obs_dim].copy(), float(params[-1]))
        adam = None
        if flags & HAS_OPTIMIZER:
            (t,) = struct.unpack_from("<Q", data, off)
            off += 8
            adam = Adam(k, lr)
            adam.t = t
            adam.m = np.frombuffer(data, "<f8", k, off).astype(float)
            adam.v = np.frombuffer(data, "<f8", k, off + 8 * k).astype(float)
            off += 16 * k
        if off != len(data):
            raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    except ValueError as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    return Checkpoint(policy, norm, seed, update, region, adam)
