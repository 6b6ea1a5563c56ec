import struct

import numpy as np
import pytest

from reachlab.checkpoint import MAGIC, Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from reachlab.policy import GaussianPolicy, RunningNorm
from reachlab.ppo import Adam


def _ckpt(rng, adam=True):
    pol = GaussianPolicy(7, 2, (16, 8))
    pol.initialize(rng, [2.0, 2.0])
    norm = RunningNorm.create(7)
    norm.update(rng.normal(size=(50, 7)))
    opt = None
    if adam:
        opt = Adam(pol.theta.size)
        opt.step(pol.theta, rng.normal(size=pol.theta.size))
    return Checkpoint(pol, norm, seed=42, update=17, region=2, adam=opt)


@pytest.mark.parametrize("adam", [True, False])
def test_round_trip_is_exact(tmp_path, rng, adam):
    ck = _ckpt(rng, adam)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.policy.theta, ck.policy.theta)
    np.testing.assert_array_equal(back.norm.mean, ck.norm.mean)
    np.testing.assert_array_equal(back.norm.var, ck.norm.var)
    assert back.norm.count == ck.norm.count
    assert (back.seed, back.update, back.region) == (42, 17, 2)
    assert back.policy.hidden == (16, 8)
    if adam:
        assert back.adam.t == 1
        np.testing.assert_array_equal(back.adam.v, ck.adam.v)
    else:
        assert back.adam is None
    assert not (tmp_path / "p.ckpt.tmp").exists()


def test_header_layout(tmp_path, rng):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, _ckpt(rng, adam=False))
    data = path.read_bytes()
    magic, version, obs_dim, act_dim, n_hidden = struct.unpack_from("<8sIIII", data)
    assert (magic, version, obs_dim, act_dim, n_hidden) == (MAGIC, 1, 7, 2, 2)
    assert struct.unpack_from("<2I", data, 24) == (16, 8)
    seed, update, region, flags = struct.unpack_from("<QQII", data, 32)
    assert (seed, update, region, flags) == (42, 17, 2, 0)
    (count,) = struct.unpack_from("<Q", data, 56)
    assert len(data) == 64 + 8 * count


def _corrupt(tmp_path, rng, mutate):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, _ckpt(rng))
    path.write_bytes(mutate(path.read_bytes()))
    return path


@pytest.mark.parametrize("mutate,message", [
    (lambda b: b"NOTACKPT" + b[8:], "not a policy checkpoint"),
    (lambda b: b[:8] + struct.pack("<I", 9) + b[12:], "unsupported checkpoint version"),
    (lambda b: b[:-100], "truncated"),
    (lambda b: b + b"\0" * 8, "trailing bytes"),
    (lambda b: b[:56] + struct.pack("<Q", 5) + b[64:], "does not match"),
])
def test_corrupt_files_are_rejected(tmp_path, rng, mutate, message):
    with pytest.raises(CheckpointError, match=message):
        load_checkpoint(_corrupt(tmp_path, rng, mutate))
