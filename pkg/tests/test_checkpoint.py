import struct

import numpy as np
import pytest

from waveunet import checkpoint as ck
from waveunet.errors import DecodeError
from waveunet.model import ModelConfig, build


@pytest.fixture
def small_ckpt():
    config = ModelConfig(levels=2, filters_per_level=3, down_kernel=3, up_kernel=3, input_frames=32,
                         output_frames=32, upsampling="learned")
    params = build(config, 1)
    m = {k: np.full_like(v, 0.5) for k, v in params.items()}
    v = {k: np.full_like(v, 0.25) for k, v in params.items()}
    return ck.Checkpoint(config, params, m, v, {"state": {"step": 3}})


def test_round_trip(small_ckpt, tmp_path):
    ck.save(small_ckpt, tmp_path / "a.ckpt")
    back = ck.load(tmp_path / "a.ckpt")
    assert back.config == small_ckpt.config
    assert list(back.params) == list(small_ckpt.params)
    for k in small_ckpt.params:
        assert back.params[k].tobytes() == small_ckpt.params[k].tobytes()
        assert back.adam_m[k].tobytes() == small_ckpt.adam_m[k].tobytes()
    assert back.training == {"state": {"step": 3}}


def test_layout_header(small_ckpt):
    raw = ck.to_bytes(small_ckpt)
    assert raw[:4] == b"WUNC"
    assert struct.unpack("<H", raw[4:6]) == (1,)
    (n,) = struct.unpack("<I", raw[6:10])
    pos = 10 + n
    (ln,) = struct.unpack("<I", raw[pos : pos + 4])
    name = raw[pos + 4 : pos + 4 + ln].decode()
    assert name == "ds1.filters"
    rank = raw[pos + 4 + ln]
    dims = struct.unpack("<3I", raw[pos + 5 + ln : pos + 17 + ln])
    assert rank == 3 and dims == (3, 1, 3)
    first = np.frombuffer(raw[pos + 17 + ln : pos + 21 + ln], "<f4")[0]
    assert first == small_ckpt.params["ds1.filters"].ravel()[0]


def test_optimizer_records_prefixed(small_ckpt):
    raw = ck.to_bytes(small_ckpt)
    assert b"adam.m.ds1.filters" in raw and b"adam.v.us1.upsample" in raw


def test_bytes_are_deterministic(small_ckpt):
    assert ck.to_bytes(small_ckpt) == ck.to_bytes(small_ckpt)


def test_truncated_file(small_ckpt):
    raw = ck.to_bytes(small_ckpt)
    with pytest.raises(DecodeError, match="truncated"):
        ck.from_bytes(raw[:-3])


def test_bad_magic():
    with pytest.raises(DecodeError):
        ck.from_bytes(b"RIFF\x01\x00")
