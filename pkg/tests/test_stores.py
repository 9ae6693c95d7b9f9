# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import hashlib
import json
import struct
import zlib

import numpy as np
import pytest

from pafi.accounting import ModelDims, count
from pafi.config import reload_cfg
from pafi.errors import (
    AlignmentError,
    CorruptHeaderError,
    CorruptPayloadError,
    DimensionError,
    DuplicateNameError,
    ShapeMetaMismatchError,
)
from pafi.numerics import Tensor
from pafi.stores import (
    ModelMeta,
    ParameterStore,
    ParamGroup,
    Role,
    abs_diff,
    check_aligned,
    decode_store,
    encode_store,
    load_checkpoint,
    manifest_path,
    save_checkpoint,
)
from pafi.stores.base import ROLE_CODES

from utils import file_bytes, flat_store, read_json, tiny_config, tiny_store


def test_param_group_rank_follows_role():
    with pytest.raises(DimensionError):
        ParamGroup("w", Role.ATTN_WEIGHT, Tensor([1.0, 2.0]))
    with pytest.raises(DimensionError):
        ParamGroup("b", Role.FFN_BIAS, Tensor([[1.0]]))
    g = ParamGroup("c", "classifier", Tensor([[1.0, 2.0]]))
    assert g.role is Role.CLASSIFIER and g.size == 2


def test_duplicate_names_rejected():
    g = ParamGroup("b", Role.FFN_BIAS, Tensor([1.0]))
    with pytest.raises(DuplicateNameError):
        ParameterStore([g, g])


def test_toy_store_total_matches_full_ft_count_plus_classifier(theta, config):
    dims = ModelDims(V=config.V, n=config.n, d=config.d, L=config.L)
    head = sum(g.size for g in theta.by_role(Role.CLASSIFIER))
    assert theta.total == count("full_ft", dims).tuned + head
    assert head == config.d * config.classes + config.classes


def test_meta_validates_and_infers(theta, config):
    assert theta.meta == config.meta
    assert ModelMeta.infer(theta.groups, heads=config.heads) == config.meta
    bad = ModelMeta(V=config.V + 1, n=config.n, d=config.d, L=config.L,
                    heads=config.heads, classes=config.classes)
    with pytest.raises(ShapeMetaMismatchError):
        ParameterStore(theta.groups, meta=bad)


def test_default_writer_is_f32_and_stable_under_resave(tmp_path, theta):
    p = tmp_path / "theta.pfrg"
    digest = save_checkpoint(theta, p)
    assert digest == hashlib.sha256(file_bytes(p)).hexdigest()
    version, _ = decode_store(file_bytes(p))
    assert version == 1
    back = load_checkpoint(p)
    assert back.meta == theta.meta
    for g in theta:
        assert np.array_equal(back[g.name].tensor.data,
                              g.tensor.data.astype("<f4").astype(np.float64))
    again = tmp_path / "again.pfrg"
    assert save_checkpoint(back, again) == digest
    assert file_bytes(again) == file_bytes(p)
    assert load_checkpoint(again).bit_equal(back)


def test_f64_round_trip_is_bit_exact(tmp_path, theta):
    p = tmp_path / "theta.pfrg"
    save_checkpoint(theta, p, precision="f64")
    back = load_checkpoint(p)
    assert decode_store(file_bytes(p))[0] == 2
    assert back.bit_equal(theta)
    assert back.content_hash() == theta.content_hash()


def test_precision_comes_from_config(tmp_path, theta, monkeypatch):
    monkeypatch.setenv("PAFI_CHECKPOINT__PRECISION", "f64")
    reload_cfg()
    p = tmp_path / "theta.pfrg"
    save_checkpoint(theta, p)
    assert load_checkpoint(p).bit_equal(theta)


def test_same_store_saved_twice_hashes_equal(tmp_path, theta):
    a = save_checkpoint(theta, tmp_path / "a.pfrg")
    b = save_checkpoint(theta, tmp_path / "b.pfrg")
    assert a == b
    assert file_bytes(tmp_path / "a.pfrg") == file_bytes(tmp_path / "b.pfrg")


def test_manifest_mirrors_groups(tmp_path, theta):
    p = tmp_path / "theta.pfrg"
    digest = save_checkpoint(theta, p)
    m = read_json(manifest_path(p))
    assert m["sha256"] == digest
    assert m["total"] == theta.total
    assert m["meta"] == theta.meta.to_dict()
    assert [g["name"] for g in m["groups"]] == theta.names


def test_empty_store_is_a_valid_file(tmp_path):
    p = tmp_path / "empty.pfrg"
    save_checkpoint(ParameterStore(), p)
    back = load_checkpoint(p)
    assert len(back) == 0 and back.meta is None
    version, groups = decode_store(file_bytes(p))
    assert version == 1 and groups == []


def test_f32_container_widens_on_load(tmp_path):
    store = flat_store(a=[0.1, 0.2, 0.3])
    p = tmp_path / "a.pfrg"
    save_checkpoint(store, p, precision="f32")
    version, groups = decode_store(file_bytes(p))
    assert version == 1
    assert groups[0].tensor.data.dtype == np.float64
    assert np.allclose(groups[0].tensor.data, [0.1, 0.2, 0.3], atol=1e-7)


def test_mutating_one_scalar_changes_only_its_bytes_and_the_crc():
    store = flat_store(a=[1.0, 2.0, 3.0], b=[4.0, 5.0])
    before = encode_store(store)
    after = encode_store(store.replace({"b": Tensor([4.0, 5.5])}))
    assert len(before) == len(after)
    diff = [i for i, (x, y) in enumerate(zip(before, after)) if x != y]
    body = [i for i in diff if i < len(before) - 4]
    assert body and max(body) - min(body) < 8
    # the changed float is the last payload value
    assert max(body) < len(before) - 4 and min(body) >= len(before) - 4 - 8


def test_truncated_payload_and_bad_crc(tmp_path, theta):
    data = encode_store(theta)
    with pytest.raises(CorruptPayloadError):
        decode_store(data[:-6])
    flipped = bytearray(data)
    flipped[-10] ^= 0xFF
    with pytest.raises(CorruptPayloadError):
        decode_store(bytes(flipped))
    with pytest.raises(CorruptPayloadError):
        decode_store(data + b"\x00")


def test_bad_header(theta):
    data = encode_store(theta)
    with pytest.raises(CorruptHeaderError):
        decode_store(b"XXXX" + data[4:])
    with pytest.raises(CorruptHeaderError):
        decode_store(data[:7])
    wrong_version = data[:4] + (9).to_bytes(2, "little") + data[6:]
    with pytest.raises(CorruptHeaderError):
        decode_store(wrong_version)


def test_manifest_that_disagrees_is_rejected(tmp_path, theta):
    p = tmp_path / "theta.pfrg"
    save_checkpoint(theta, p)
    mp = manifest_path(p)
    m = json.loads(mp.read_text())
    m["groups"] = m["groups"][1:]
    mp.write_text(json.dumps(m))
    with pytest.raises(ShapeMetaMismatchError):
        load_checkpoint(p)


def test_meta_inferred_without_manifest(tmp_path, theta):
    p = tmp_path / "theta.pfrg"
    save_checkpoint(theta, p)
    manifest_path(p).unlink()
    assert load_checkpoint(p, heads=theta.meta.heads).meta == theta.meta


def test_abs_diff():
    a = flat_store(x=[3.0], y=[1.0, -2.0])
    b = flat_store(x=[5.0], y=[1.0, 2.0])
    d = abs_diff(a, b)
    assert d["x"].tensor.data.tolist() == [2.0]
    assert d["y"].tensor.data.tolist() == [0.0, 4.0]
    assert all(not g.tensor.data.any() for g in abs_diff(a, a))


def test_abs_diff_random_pair_matches_elementwise_loop(theta):
    other = tiny_store(tiny_config(), seed=5)
    d = abs_diff(theta, other)
    for g in theta:
        x, y = g.tensor.flat(), other[g.name].tensor.flat()
        got = d[g.name].tensor.flat()
        for i in range(g.size):
            assert got[i] == abs(x[i] - y[i])


def test_alignment_errors_name_groups():
    a = flat_store(x=[1.0], y=[1.0, 2.0])
    b = flat_store(x=[1.0], z=[1.0, 2.0])
    with pytest.raises(AlignmentError) as e:
        check_aligned(a, b)
    assert e.value.groups == ["y", "z"]


def test_derivations_share_untouched_tensors(theta):
    name = "classifier.bias"
    updated = theta.replace({name: Tensor(np.ones(theta[name].shape))})
    assert updated.meta == theta.meta
    for g in theta:
        if g.name != name:
            assert updated[g.name].tensor is g.tensor
    assert updated[name].tensor.data.tolist() == [1.0, 1.0]
    with pytest.raises(AlignmentError):
        theta.replace({name: Tensor([1.0, 2.0, 3.0])})


def test_select_without_and_union(theta):
    norms = theta.by_role(Role.NORM_WEIGHT, Role.NORM_BIAS)
    picked = theta.select(g.name for g in norms)
    assert picked.meta is None and len(picked) == len(norms)
    rest = theta.without(Role.NORM_WEIGHT, Role.NORM_BIAS)
    assert rest.meta is None
    assert sorted(rest.union(picked).names) == sorted(theta.names)
    with pytest.raises(DuplicateNameError):
        theta.union(picked)
    extra = ParameterStore([ParamGroup("site.down.weight", Role.ADAPTER, Tensor([[1.0]]))])
    # adapter groups never disturb the meta check
    assert theta.union(extra).without(Role.ADAPTER).meta == theta.meta


def test_count_excludes_classifier(theta):
    head = sum(g.size for g in theta.by_role(Role.CLASSIFIER))
    assert theta.count() == theta.total - head
    offsets = theta.flat_offsets()
    assert offsets[theta.names[0]] == 0
    assert offsets[theta.names[1]] == theta.groups[0].size


def _drop_shapes(m):
    for g in m["groups"]:
        del g["shape"]
    return m


@pytest.mark.parametrize(
    "tamper",
    [
        _drop_shapes,
        lambda m: m | {"groups": [None]},
        lambda m: m | {"meta": {"V": 3}},
        lambda m: m | {"meta": dict(m["meta"], d="eight")},
        lambda m: [m],
    ],
    ids=["missing-shape", "null-group", "partial-meta", "non-integer-meta", "not-an-object"],
)
def test_malformed_manifest_is_a_header_error(tmp_path, theta, tamper):
    p = tmp_path / "theta.pfrg"
    save_checkpoint(theta, p)
    m = read_json(manifest_path(p))
    manifest_path(p).write_text(json.dumps(tamper(m)), encoding="utf-8")
    with pytest.raises(CorruptHeaderError):
        load_checkpoint(p)


def test_oversized_dims_are_a_payload_error():
    body = b"PFRG" + struct.pack("<HI", 1, 1) + struct.pack("<H", 1) + b"w"
    body += struct.pack("<BB", ROLE_CODES[Role.FFN_BIAS], 2) + struct.pack("<2Q", 2**63, 2**63)
    with pytest.raises(CorruptPayloadError):
        decode_store(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
