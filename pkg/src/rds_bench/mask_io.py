"""PNG mask loading and the run-length transport codec used in prediction files."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class MaskReadError(OSError):
    pass


class RLEError(ValueError):
    pass


@dataclass
class TransportedMask:
    """Row-major run lengths, background run first.

    A leading zero run means the mask starts with foreground.
    """

    token_name: str
    width: int
    height: int
    rle: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"token": self.token_name, "width": self.width, "height": self.height, "rle": list(self.rle)}

    @classmethod
    def from_json(cls, obj: dict) -> "TransportedMask":
        try:
            token, width, height, rle = obj["token"], obj["width"], obj["height"], obj["rle"]
        except (KeyError, TypeError) as exc:
            raise RLEError(f"malformed mask entry: {exc}") from None
        if not isinstance(token, str):
            raise RLEError("mask token must be a string")
        for v in (width, height):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise RLEError("mask dimensions must be non-negative integers")
        if not isinstance(rle, list) or not all(isinstance(r, int) and not isinstance(r, bool) for r in rle):
            raise RLEError("rle must be a list of integers")
        t = cls(token, width, height, rle)
        check_rle(t)
        return t


def check_rle(t: TransportedMask) -> None:
    runs = t.rle
    if any(r < 0 for r in runs):
        raise RLEError("negative run length")
    if sum(runs) != t.width * t.height:
        raise RLEError(f"runs sum to {sum(runs)}, expected {t.width * t.height}")
    if any(r == 0 for r in runs[1:]):
        raise RLEError("zero-length interior run")


def rle_encode(mask, token_name: str = "seg000") -> TransportedMask:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"expected a 2D mask, got shape {m.shape}")
    height, width = m.shape
    flat = m.ravel()
    if flat.size == 0:
        return TransportedMask(token_name, width, height, [])
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return TransportedMask(token_name, width, height, runs)


def rle_decode(t: TransportedMask) -> np.ndarray:
    check_rle(t)
    values = np.arange(len(t.rle)) % 2 == 1
    flat = np.repeat(values, t.rle)
    return flat.reshape(t.height, t.width)


def load_mask(path, threshold: int = 128) -> np.ndarray:
    """Read an 8-bit PNG as a binary mask; pixels ``>= threshold`` are foreground.

    Multi-channel images are accepted only when every channel agrees.
    """
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be within 0..255")
    try:
        with Image.open(Path(path)) as im:
            im.load()
            if im.mode in ("P", "1"):
                im = im.convert("L")
            arr = np.asarray(im)
            mode = im.mode
    except (OSError, ValueError) as exc:
        raise MaskReadError(f"cannot read mask {path}: {exc}") from exc
    if arr.ndim == 3:
        if mode in ("LA", "RGBA", "PA"):
            arr = arr[..., :-1]
        if not (arr == arr[..., :1]).all():
            raise MaskReadError(f"{path}: channels disagree, not a mask image")
        arr = arr[..., 0]
    if arr.dtype != np.uint8:
        raise MaskReadError(f"{path}: expected 8-bit pixels, got {arr.dtype}")
    return arr >= threshold


def save_mask(path, mask) -> None:
    m = np.asarray(mask, dtype=bool)
    Image.fromarray(m.astype(np.uint8) * 255).save(Path(path))


def image_size(path) -> tuple[int, int]:
    """``(width, height)`` of an image file without decoding pixels."""
    with Image.open(Path(path)) as im:
        return im.size
