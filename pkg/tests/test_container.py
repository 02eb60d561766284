import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from dino_unet import container
from dino_unet.container import ContainerError, Entry

dtypes = st.sampled_from([np.dtype("<f4"), np.dtype("<f8"), np.dtype("u1"), np.dtype("<i4")])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.text(min_size=1, max_size=12), dtypes.flatmap(
    lambda dt: arrays(dt, array_shapes(min_dims=0, max_dims=3, max_side=4))), st.booleans()),
    max_size=4))
def test_roundtrip(items):
    entries = [Entry(n, a, t) for n, a, t in items]
    back = container.read_entries(__import__("io").BytesIO(container.to_bytes(entries)))
    assert [e.name for e in back] == [e.name for e in entries]
    for a, b in zip(entries, back):
        assert a.trainable == b.trainable
        assert b.array.dtype == a.array.dtype and b.array.shape == a.array.shape
        np.testing.assert_array_equal(b.array, a.array)


def test_header_layout():
    raw = container.to_bytes([Entry("ab", np.array([[1.0, 2.0]], "<f4"), True)])
    assert raw[:4] == b"DUNT"
    version, count = struct.unpack("<II", raw[4:12])
    assert (version, count) == (container.VERSION, 1)
    (nlen,) = struct.unpack("<H", raw[12:14])
    assert raw[14:14 + nlen] == b"ab"
    code, trainable, ndim = raw[16], raw[17], raw[18]
    assert (code, trainable, ndim) == (1, 1, 2)
    assert struct.unpack("<II", raw[19:27]) == (1, 2)
    assert np.frombuffer(raw[27:], "<f4").tolist() == [1.0, 2.0]


def test_bad_magic_and_dtype(tmp_path):
    p = tmp_path / "x.dunt"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ContainerError):
        container.load(p)
    with pytest.raises(ContainerError):
        container.to_bytes([Entry("c", np.zeros(2, np.complex64))])


def test_truncated_payload_rejected():
    raw = container.to_bytes([Entry("a", np.arange(6, dtype="<f8"))])
    with pytest.raises(ContainerError):
        container.read_entries(__import__("io").BytesIO(raw[:-3]))
