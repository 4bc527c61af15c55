"""Canonical codec: round-trips, canonicalization, framing."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from barrierflow import wire


def test_round_trip_scalars():
    for value in (None, True, False, 0, -1, 1 << 80, -(1 << 80), 0.5, -0.0,
                  "", "word", "répé", b"", b"\x00\xff"):
        assert wire.decode(wire.encode(value)) == value


def test_round_trip_preserves_tuple_vs_list():
    value = {"a": [1, 2], "b": (1, 2)}
    back = wire.decode(wire.encode(value))
    assert isinstance(back["a"], list)
    assert isinstance(back["b"], tuple)
    assert back == value


def test_dict_encoding_is_canonical():
    a = {"x": 1, "y": 2, ("t", 3): "v"}
    b = {("t", 3): "v", "y": 2, "x": 1}
    assert wire.encode(a) == wire.encode(b)


def test_non_string_dict_keys_round_trip():
    value = {1: "a", (2, "k"): [3], "s": {4: 5}}
    assert wire.decode(wire.encode(value)) == value


def test_frame_unframe_and_version():
    blob = wire.frame({"k": 1})
    assert blob[0] == wire.WIRE_VERSION
    assert wire.unframe(blob) == {"k": 1}
    with pytest.raises(wire.WireError):
        wire.unframe(bytes([99]) + blob[1:])
    with pytest.raises(wire.WireError):
        wire.unframe(blob[:-1])


def test_unsupported_type_rejected():
    with pytest.raises(wire.WireError):
        wire.encode(object())


def test_truncation_detected():
    blob = wire.encode([1, 2, 3])
    with pytest.raises(wire.WireError):
        wire.decode(blob[:-2])


_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers()
    | st.floats(allow_nan=False)
    | st.text(max_size=20)
    | st.binary(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.tuples(children, children)
    | st.dictionaries(st.text(max_size=5), children, max_size=4),
    max_leaves=12,
)


@given(_values)
def test_round_trip_property(value):
    assert wire.decode(wire.encode(value)) == value


@given(_values)
def test_digest_stable(value):
    assert wire.digest(value) == wire.digest(wire.copy_value(value))
