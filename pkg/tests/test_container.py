"""Binary checkpoint container: framing, metadata, determinism, corruption."""

import numpy as np
import pytest

from cner.container import (ContainerError, container_bytes, expect_kind,
                            load, parse_container, restore_params, save)
from cner.nn import Parameter, make_rng


def sample_params():
    rng = make_rng(0)
    return [
        Parameter("z.last", rng.normal(size=(2, 3)).astype(np.float32)),
        Parameter("a.first", rng.normal(size=(4,)).astype(np.float32)),
        Parameter("m.mid", rng.normal(size=(1, 2, 2)).astype(np.float32)),
    ]


def test_round_trip():
    params = sample_params()
    meta = {"kind": "test", "alpha": "1", "note": "hello world"}
    blob = container_bytes(meta, params)
    meta_out, arrays = parse_container(blob)
    assert meta_out == meta
    assert set(arrays) == {"z.last", "a.first", "m.mid"}
    for p in params:
        np.testing.assert_array_equal(arrays[p.name], p.value)
        assert arrays[p.name].dtype == np.float32


def test_magic_prefix():
    blob = container_bytes({"kind": "t"}, sample_params())
    assert blob[:8] == b"CNERMDL1"


def test_bad_magic_rejected():
    blob = bytearray(container_bytes({"kind": "t"}, sample_params()))
    blob[0] ^= 0xFF
    with pytest.raises(ContainerError, match="magic"):
        parse_container(bytes(blob))


def test_serialization_is_deterministic_and_name_sorted():
    params = sample_params()
    meta = {"b": "2", "a": "1"}
    blob1 = container_bytes(meta, params)
    blob2 = container_bytes(dict(reversed(meta.items())), list(reversed(params)))
    assert blob1 == blob2  # order of inputs must not matter
    # param records appear in sorted-name order
    assert blob1.index(b"a.first") < blob1.index(b"m.mid") < blob1.index(b"z.last")


def test_truncated_data_names_offset():
    blob = container_bytes({"kind": "t"}, sample_params())
    with pytest.raises(ContainerError, match="offset"):
        parse_container(blob[:len(blob) - 7])
    with pytest.raises(ContainerError):
        parse_container(blob[:9])


def test_trailing_garbage_rejected():
    blob = container_bytes({"kind": "t"}, sample_params())
    with pytest.raises(ContainerError, match="trailing"):
        parse_container(blob + b"\x00")


def test_duplicate_param_names_rejected_at_write():
    p = Parameter("same", np.zeros(2, dtype=np.float32))
    q = Parameter("same", np.ones(2, dtype=np.float32))
    with pytest.raises(ContainerError, match="same"):
        container_bytes({}, [p, q])


def test_metadata_value_may_not_contain_newline():
    with pytest.raises(ContainerError):
        container_bytes({"k": "line1\nline2"}, [])


def test_metadata_key_shape_checked():
    with pytest.raises(ContainerError):
        container_bytes({"bad key": "v"}, [])
    with pytest.raises(ContainerError):
        container_bytes({"": "v"}, [])


def test_metadata_values_may_contain_equals_and_spaces():
    meta = {"expr": "a=b=c", "text": "two words"}
    out, _ = parse_container(container_bytes(meta, []))
    assert out == meta


def test_empty_metadata_and_no_params():
    meta, arrays = parse_container(container_bytes({}, []))
    assert meta == {} and arrays == {}


def test_save_load_file_round_trip(tmp_path):
    path = str(tmp_path / "model.bin")
    params = sample_params()
    save(path, {"kind": "test"}, params)
    meta, arrays = load(path)
    assert meta["kind"] == "test"
    np.testing.assert_array_equal(arrays["a.first"], params[1].value)


def test_save_load_save_is_byte_identical(tmp_path):
    p1 = str(tmp_path / "one.bin")
    p2 = str(tmp_path / "two.bin")
    params = sample_params()
    save(p1, {"kind": "test", "cfg": "{}"}, params)
    meta, arrays = load(p1)
    reloaded = [Parameter(name, arrays[name]) for name in arrays]
    save(p2, meta, reloaded)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_load_errors_name_the_path(tmp_path):
    path = tmp_path / "broken.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ContainerError, match="broken.bin"):
        load(str(path))


def test_expect_kind():
    expect_kind({"kind": "char_lm"}, "char_lm")
    with pytest.raises(ContainerError, match="word_lm"):
        expect_kind({"kind": "char_lm"}, "word_lm", path="m.bin")
    with pytest.raises(ContainerError):
        expect_kind({}, "char_lm")


def test_restore_params_happy_path():
    params = sample_params()
    blob = container_bytes({}, params)
    _, arrays = parse_container(blob)
    fresh = [Parameter(p.name, np.zeros_like(p.value)) for p in params]
    restore_params(fresh, arrays)
    for orig, new in zip(params, fresh):
        np.testing.assert_array_equal(new.value, orig.value)


def test_restore_params_missing_and_unexpected():
    params = sample_params()
    _, arrays = parse_container(container_bytes({}, params))
    missing = [Parameter("not.there", np.zeros(2, dtype=np.float32))] + params
    with pytest.raises(ContainerError, match="not.there"):
        restore_params(missing, arrays)
    with pytest.raises(ContainerError, match="m.mid"):
        restore_params(params[:2], arrays)


def test_restore_params_shape_mismatch():
    params = sample_params()
    _, arrays = parse_container(container_bytes({}, params))
    wrong = [Parameter("a.first", np.zeros((2, 2), dtype=np.float32)),
             Parameter("z.last", params[0].value.copy()),
             Parameter("m.mid", params[2].value.copy())]
    with pytest.raises(ContainerError, match="a.first"):
        restore_params(wrong, arrays)
