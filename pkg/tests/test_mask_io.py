import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from rds_bench.mask_io import (
    MaskReadError,
    RLEError,
    TransportedMask,
    load_mask,
    rle_decode,
    rle_encode,
    save_mask,
)

from . import oracles


def _png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)
    return path


def test_load_full_and_empty(tmp_path):
    full = load_mask(_png(tmp_path / "full.png", np.full((4, 4), 255)))
    assert full.shape == (4, 4) and full.sum() == 16
    assert load_mask(_png(tmp_path / "zero.png", np.zeros((3, 5)))).sum() == 0


def test_load_checkerboard(tmp_path):
    arr = np.array([[0, 255], [255, 0]])
    m = load_mask(_png(tmp_path / "c.png", arr))
    expected = [[v >= 128 for v in row] for row in arr.tolist()]
    assert m.tolist() == expected
    assert list(zip(*np.nonzero(m))) == [(0, 1), (1, 0)]


def test_threshold_monotone(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, size=(16, 16))
    path = _png(tmp_path / "g.png", arr)
    prev = load_mask(path, threshold=0)
    assert prev.all()
    for t in range(1, 256, 5):
        cur = load_mask(path, threshold=t)
        assert not (cur & ~prev).any()
        prev = cur


def test_rgb_masks(tmp_path):
    gray = np.array([[0, 200], [255, 10]], dtype=np.uint8)
    rgb = np.stack([gray] * 3, axis=-1)
    assert load_mask(_png(tmp_path / "rgb.png", rgb)).tolist() == [[False, True], [True, False]]
    rgb[0, 0, 1] = 255
    with pytest.raises(MaskReadError):
        load_mask(_png(tmp_path / "bad.png", rgb))


def test_unreadable(tmp_path):
    bad = tmp_path / "x.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(MaskReadError):
        load_mask(bad)
    with pytest.raises(MaskReadError):
        load_mask(tmp_path / "missing.png")


def test_save_load_roundtrip(tmp_path):
    m = np.random.default_rng(3).random((7, 9)) < 0.5
    save_mask(tmp_path / "m.png", m)
    assert (load_mask(tmp_path / "m.png") == m).all()


def test_rle_examples():
    assert rle_encode(np.zeros((2, 2), bool)).rle == [4]
    assert rle_encode(np.ones((2, 2), bool)).rle == [0, 4]
    t = rle_encode(np.array([[0, 1, 1], [0, 0, 1]], bool), "seg001")
    assert (t.token_name, t.width, t.height, t.rle) == ("seg001", 3, 2, [1, 2, 2, 1])


def test_rle_decode_errors():
    with pytest.raises(RLEError):
        rle_decode(TransportedMask("seg000", 2, 2, [1, 2]))
    with pytest.raises(RLEError):
        rle_decode(TransportedMask("seg000", 2, 2, [2, 0, 2]))
    with pytest.raises(RLEError):
        TransportedMask.from_json({"token": "seg000", "width": 2, "height": 2, "rle": [1, "x"]})
    with pytest.raises(RLEError):
        TransportedMask.from_json({"token": "seg000", "width": 2})


mask_arrays = st.tuples(st.integers(1, 128), st.integers(1, 128)).flatmap(lambda s: arrays(bool, s))


@settings(max_examples=300)
@given(mask_arrays)
def test_rle_roundtrip_and_canonical(m):
    t = rle_encode(m)
    assert t.rle == oracles.rle(m)
    assert (rle_decode(t) == m).all()
    assert rle_encode(rle_decode(t)).rle == t.rle


def test_json_roundtrip():
    t = rle_encode(np.eye(3, dtype=bool), "seg002")
    back = TransportedMask.from_json(t.to_json())
    assert back == t
