import dataclasses
import json

import numpy as np
import pytest
import torch

from midfusion.archive import (PROMPTER_PREFIX, ArchiveFormatError, MissingTensorError, ShapeMismatchError,
                               TruncatedPayloadError, WeightArchive, apply_archive, archive_module, load_archive,
                               save_archive)
from midfusion.foundation import Foundation, checksum
from midfusion.prompters import init_prompter_bank

from helpers import randomize


def test_round_trip_is_bitwise(tmp_path, toy_cfg, foundation32):
    path = tmp_path / "w.mfwa"
    save_archive(archive_module(foundation32), path)
    other = Foundation(toy_cfg.foundation, seed=9)
    apply_archive(load_archive(path), other)
    for (n1, a), (n2, b) in zip(foundation32.state_dict().items(), other.state_dict().items()):
        assert n1 == n2 and torch.equal(a, b)
    assert checksum(other) == checksum(foundation32)


def test_writing_twice_gives_identical_bytes(toy_cfg, foundation32):
    assert archive_module(foundation32).to_bytes() == archive_module(Foundation(toy_cfg.foundation, 0)).to_bytes()


def test_missing_tensor_named(toy_cfg, foundation32):
    arrays = archive_module(foundation32).subset("")
    del arrays["blocks.1.mlp.fc1.weight"]
    with pytest.raises(MissingTensorError, match="missing tensor blocks.1.mlp.fc1.weight"):
        apply_archive(WeightArchive.from_arrays(arrays), foundation32)


def test_shape_mismatch_names_both_shapes(toy_cfg):
    cfg = dataclasses.replace(toy_cfg.foundation, embed_dim=8)
    f = Foundation(cfg, seed=0)
    arrays = archive_module(f).subset("")
    arrays["norm.weight"] = np.ones(7, dtype=np.float32)
    with pytest.raises(ShapeMismatchError) as err:
        apply_archive(WeightArchive.from_arrays(arrays), f)
    assert "[8]" in str(err.value) and "[7]" in str(err.value)


def test_failed_load_leaves_module_untouched(toy_cfg, foundation32):
    before = checksum(foundation32)
    arrays = {k: v + 1 for k, v in archive_module(foundation32).subset("").items()}
    arrays["norm.bias"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(ShapeMismatchError):
        apply_archive(WeightArchive.from_arrays(arrays), foundation32)
    assert checksum(foundation32) == before


def test_truncated_payload(foundation32):
    raw = archive_module(foundation32).to_bytes()
    with pytest.raises(TruncatedPayloadError):
        WeightArchive.from_bytes(raw[:-4])


@pytest.mark.parametrize("raw", [b"", b"abc\n{}", b"5\n[1,2]", b"3\n{x}"])
def test_malformed_header(raw):
    with pytest.raises(ArchiveFormatError):
        WeightArchive.from_bytes(raw)


def test_header_too_long_is_truncation():
    with pytest.raises(TruncatedPayloadError):
        WeightArchive.from_bytes(b"100\n{}")


def test_layout_matches_documented_format(foundation32):
    raw = archive_module(foundation32).to_bytes()
    nl = raw.index(b"\n")
    n = int(raw[:nl])
    index = json.loads(raw[nl + 1:nl + 1 + n])
    payload = raw[nl + 1 + n:]
    assert list(index) == sorted(index)
    offset = 0
    for name in sorted(index):
        e = index[name]
        assert e["dtype"] == "float32" and e["offset"] == offset
        count = int(np.prod(e["shape"]))
        got = np.frombuffer(payload, "<f4", count, e["offset"]).reshape(e["shape"])
        assert np.array_equal(got, foundation32.state_dict()[name].numpy())
        offset += 4 * count
    assert offset == len(payload)


def test_prompter_prefix_round_trip(toy_cfg):
    bank = randomize(init_prompter_bank(toy_cfg, 0), 5)
    archive = archive_module(bank, PROMPTER_PREFIX)
    assert all(n.startswith(PROMPTER_PREFIX) for n in archive.names())
    other = init_prompter_bank(toy_cfg, 1)
    apply_archive(WeightArchive.from_bytes(archive.to_bytes()), other, PROMPTER_PREFIX)
    for a, b in zip(bank.state_dict().values(), other.state_dict().values()):
        assert torch.equal(a, b)
