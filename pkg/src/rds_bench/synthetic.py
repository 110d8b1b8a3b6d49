"""Synthetic manifests with geometric masks, so nothing needs external data."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import (
    Diagnosis,
    Manifest,
    SegTarget,
    SourceRecord,
    TargetKind,
    TaskKind,
    load_manifest,
    render_vqaseg_sample,
    write_manifest,
)
from .mask_io import save_mask


@dataclass(frozen=True)
class _Finding:
    diagnosis: str
    diagnosis_synonyms: tuple[str, ...]
    organ: str
    organ_synonyms: tuple[str, ...]
    abnormality: str
    abnormality_synonyms: tuple[str, ...]


CATALOG = {
    "XRAY": (
        _Finding("COVID-19", ("COVID 19",), "lung", ("lungs",), "COVID-19 infection", ("covid infection",)),
        _Finding("non-COVID infection", ("pneumonia",), "lung", ("lungs",), "non-COVID infection", ("lung infection",)),
    ),
    "CT": (
        _Finding("liver tumour", ("liver tumor",), "liver", ("hepatic organ",), "liver tumour", ("liver tumor",)),
        _Finding("pancreas tumour", ("pancreas tumor",), "pancreas", ("pancreatic organ",), "pancreas tumour", ("pancreas tumor",)),
    ),
    "MRI": (
        _Finding("kidney lesion", ("renal lesion",), "kidney", ("renal organ",), "kidney lesion", ("renal lesion",)),
    ),
}


def ellipse_mask(shape: tuple[int, int], center: tuple[float, float], axes: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    cy, cx = center
    ay, ax = axes
    return ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


def rectangle_mask(shape: tuple[int, int], top: int, left: int, height: int, width: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[top : top + height, left : left + width] = True
    return m


def random_masks(rng: np.random.Generator, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """An organ ellipse and a non-empty abnormality (ellipse or rectangle) inside it."""
    h, w = shape
    cy = rng.uniform(0.35, 0.65) * h
    cx = rng.uniform(0.35, 0.65) * w
    ay = rng.uniform(0.15, 0.3) * h
    ax = rng.uniform(0.15, 0.3) * w
    organ = ellipse_mask(shape, (cy, cx), (ay, ax))
    if rng.random() < 0.5:
        abn = ellipse_mask(shape, (cy, cx), (ay * rng.uniform(0.2, 0.5), ax * rng.uniform(0.2, 0.5)))
    else:
        rh = max(1, int(ay * rng.uniform(0.3, 0.7)))
        rw = max(1, int(ax * rng.uniform(0.3, 0.7)))
        abn = rectangle_mask(shape, int(cy) - rh // 2, int(cx) - rw // 2, rh, rw)
    abn &= organ
    if not abn.any():
        abn[int(cy), int(cx)] = True
        organ[int(cy), int(cx)] = True
    return organ, abn


def make_sources(
    out_dir,
    n_samples: int,
    seed: int = 0,
    canvas: tuple[int, int] = (64, 64),
    modalities: Sequence[str] = ("XRAY", "CT"),
    positive_fraction: float = 0.5,
    max_volume: int = 6,
) -> list[SourceRecord]:
    """Write images and masks under ``out_dir`` and return their source records.

    CT and MRI records come in volumes of 1..``max_volume`` slices.
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    volume, left_in_volume = None, 0
    for i in range(n_samples):
        sid = f"s{i:05d}"
        modality = modalities[int(rng.integers(len(modalities)))]
        volume_id = None
        if modality in ("CT", "MRI"):
            if left_in_volume == 0:
                volume = f"vol{i:05d}"
                left_in_volume = int(rng.integers(1, max_volume + 1))
            volume_id = volume
            left_in_volume -= 1
        positive = rng.random() < positive_fraction
        organ, abn = random_masks(rng, canvas)
        image = rng.integers(0, 80, size=canvas, dtype=np.uint8)
        image[organ] += 100
        image[abn] += 60
        image_path = out_dir / "images" / f"{sid}.png"
        Image.fromarray(image).save(image_path)
        diagnosis = None
        targets: tuple[SegTarget, ...] = ()
        if positive:
            f = CATALOG[modality][int(rng.integers(len(CATALOG[modality])))]
            organ_path = out_dir / "masks" / f"{sid}_organ.png"
            abn_path = out_dir / "masks" / f"{sid}_abn.png"
            save_mask(organ_path, organ)
            save_mask(abn_path, abn)
            diagnosis = Diagnosis(f.diagnosis, f.diagnosis_synonyms)
            targets = (
                SegTarget(f.organ, f.organ_synonyms, organ_path, TargetKind.ORGAN),
                SegTarget(f.abnormality, f.abnormality_synonyms, abn_path, TargetKind.ABNORMALITY),
            )
        records.append(SourceRecord(sid, image_path, modality, diagnosis, targets, volume_id))
    return records


def make_manifest(out_dir, n_samples: int, seed: int = 0, **kwargs) -> Manifest:
    """Synthetic VQA-Seg manifest written to ``out_dir/manifest.json`` and reloaded."""
    records = make_sources(out_dir, n_samples, seed, **kwargs)
    manifest = Manifest(TaskKind.VQA_SEG, [render_vqaseg_sample(r) for r in records])
    path = write_manifest(manifest, Path(out_dir) / "manifest.json")
    return load_manifest(path)
