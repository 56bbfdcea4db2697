"""Dataset manifests, a synthetic blob generator and on-disk label corruption.

A manifest is a JSON file listing image/mask PGM pairs with their split.
Paths are stored relative to the manifest's directory, so external data can
be dropped in by writing a manifest by hand.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .adl import SegData
from .formats import read_mask, read_pgm, write_mask, write_pgm
from .noise import NoiseSpec, corrupt_masks

SPLITS = ("train", "val", "test")


@dataclass
class SampleRecord:
    sample_id: int
    split: str
    image_path: str
    mask_path: str
    original_mask_path: Optional[str] = None
    corrupted: bool = False
    noise_kind: Optional[str] = None
    alpha_target: Optional[float] = None
    alpha_achieved: Optional[float] = None
    infeasible: bool = False


@dataclass
class DatasetManifest:
    records: List[SampleRecord]
    root: Path = field(default_factory=Path)
    size: Optional[int] = None
    seed: Optional[int] = None
    corruption: Optional[dict] = None

    def validate(self, check_files: bool = True) -> None:
        ids = [r.sample_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate sample ids in manifest")
        for r in self.records:
            if r.split not in SPLITS:
                raise ValueError(f"sample {r.sample_id}: unknown split {r.split!r}")
            if r.split != "train" and r.corrupted:
                raise ValueError(f"sample {r.sample_id}: only training samples may be corrupted")
            if r.corrupted and not r.original_mask_path:
                raise ValueError(f"sample {r.sample_id}: corrupted record lacks original_mask_path")
            if check_files:
                for p in (r.image_path, r.mask_path, r.original_mask_path):
                    if p and not (self.root / p).exists():
                        raise FileNotFoundError(f"sample {r.sample_id}: missing file {p}")

    def split(self, name: str) -> List[SampleRecord]:
        return sorted((r for r in self.records if r.split == name), key=lambda r: r.sample_id)

    def to_json(self) -> str:
        body = {
            "format": "rarunet-manifest",
            "version": 1,
            "size": self.size,
            "seed": self.seed,
            "corruption": self.corruption,
            "records": [asdict(r) for r in sorted(self.records, key=lambda r: r.sample_id)],
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        body = json.loads(path.read_text())
        if body.get("format") != "rarunet-manifest":
            raise ValueError(f"{path} is not a rarunet manifest")
        records = [SampleRecord(**r) for r in body["records"]]
        m = cls(records, path.parent, body.get("size"), body.get("seed"), body.get("corruption"))
        m.validate()
        return m


# ---------------------------------------------------------------- synthetic data

def sample_blobs(rng: np.random.Generator, size: int) -> list:
    """Parameters for 1-3 ellipses or lobed blobs."""
    blobs = []
    for _ in range(int(rng.integers(1, 4))):
        blobs.append({
            "kind": "ellipse" if rng.random() < 0.5 else "lobed",
            "cy": float(rng.uniform(0.2, 0.8) * size),
            "cx": float(rng.uniform(0.2, 0.8) * size),
            "ry": float(rng.uniform(0.07, 0.2) * size),
            "rx": float(rng.uniform(0.07, 0.2) * size),
            "theta": float(rng.uniform(0, math.pi)),
            "lobes": int(rng.integers(2, 6)),
            "amp": float(rng.uniform(0.1, 0.3)),
            "phase": float(rng.uniform(0, 2 * math.pi)),
            "intensity": float(rng.uniform(0.25, 0.45)),
        })
    return blobs


def blob_support(blob: dict, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    dy, dx = yy - blob["cy"], xx - blob["cx"]
    c, s = math.cos(blob["theta"]), math.sin(blob["theta"])
    u = (dx * c + dy * s) / blob["rx"]
    v = (-dx * s + dy * c) / blob["ry"]
    r2 = u * u + v * v
    if blob["kind"] == "ellipse":
        return r2 <= 1.0
    ang = np.arctan2(v, u)
    edge = 1.0 + blob["amp"] * np.sin(blob["lobes"] * ang + blob["phase"])
    return np.sqrt(r2) <= edge


def render_blobs(blobs: Sequence[dict], size: int) -> np.ndarray:
    """Noise-free foreground intensity; zero exactly off the blob supports."""
    out = np.zeros((size, size))
    for b in blobs:
        out += b["intensity"] * blob_support(b, size)
    return out


def synth_sample(seed: int, sample_id: int, size: int):
    """One (image uint8, mask bool, blobs) triple; mask covers 1%-35% of the image."""
    rng = np.random.default_rng([seed, sample_id])
    while True:
        blobs = sample_blobs(rng, size)
        clean = render_blobs(blobs, size)
        area = np.count_nonzero(clean > 0) / (size * size)
        if 0.01 <= area <= 0.35:
            break
    texture = ndimage.gaussian_filter(rng.random((size, size)), 3.0)
    texture = (texture - texture.min()) / max(np.ptp(texture), 1e-12)
    image = 0.15 + 0.3 * texture + clean + rng.normal(0.0, 0.05, (size, size))
    image = np.clip(image, 0.0, 1.0)
    return np.round(image * 255).astype(np.uint8), clean > 0, blobs


def split_ids(n: int, seed: int) -> dict:
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    out = {}
    for i, sid in enumerate(perm):
        out[int(sid)] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return out


def gen_synth(n: int, size: int, seed: int, out_dir) -> DatasetManifest:
    """Write ``n`` synthetic image/mask pairs plus ``manifest.json`` into ``out_dir``."""
    if size % 16:
        raise ValueError(f"size must be a multiple of 16, got {size}")
    if n < 10:
        raise ValueError(f"need at least 10 samples, got {n}")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    splits = split_ids(n, seed)
    records = []
    for sid in range(n):
        image, mask, _ = synth_sample(seed, sid, size)
        ip, mp = f"images/{sid:04d}.pgm", f"masks/{sid:04d}.pgm"
        write_pgm(root / ip, image)
        write_mask(root / mp, mask)
        records.append(SampleRecord(sid, splits[sid], ip, mp))
    manifest = DatasetManifest(records, root, size, seed, None)
    manifest.save(root / "manifest.json")
    return manifest


# ---------------------------------------------------------------- corruption

def corrupt_dataset(manifest: DatasetManifest, beta: float, specs: Sequence[NoiseSpec], seed: int):
    """Replace a ``beta`` fraction of the training masks with calibrated noisy ones.

    Corruption always starts from the original masks, which stay on disk and
    are referenced by ``original_mask_path``. Returns ``(manifest, records)``.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    root = manifest.root
    train = manifest.split("train")
    clean = {}
    for r in train:
        r.mask_path = r.original_mask_path or r.mask_path
        r.original_mask_path = None
        r.corrupted, r.noise_kind, r.alpha_target, r.alpha_achieved, r.infeasible = False, None, None, None, False
        clean[r.sample_id] = read_mask(root / r.mask_path)
    noisy, records = corrupt_masks(clean, [r.sample_id for r in train], beta, specs, seed)
    if noisy:
        (root / "noisy").mkdir(exist_ok=True)
    by_id = {r.sample_id: r for r in train}
    for rec in records:
        if not rec.corrupted:
            continue
        r = by_id[rec.sample_id]
        path = f"noisy/{rec.sample_id:04d}.pgm"
        write_mask(root / path, noisy[rec.sample_id])
        r.original_mask_path, r.mask_path = r.mask_path, path
        r.corrupted, r.noise_kind = True, rec.kind
        r.alpha_target, r.alpha_achieved, r.infeasible = rec.alpha_target, rec.alpha_achieved, rec.infeasible
    alphas = sorted({s.alpha_target for s in specs})
    manifest.corruption = {
        "beta": beta,
        "alpha": alphas[0] if len(alphas) == 1 else alphas,
        "kinds": [s.kind for s in specs],
        "seed": seed,
        "tolerance": specs[0].tolerance if specs else None,
    }
    return manifest, records


def schedule_noise(manifest: DatasetManifest):
    """(alpha, beta) for the exclusion schedule; a clean dataset gives (1, 0)."""
    c = manifest.corruption
    if not c:
        return 1.0, 0.0
    alpha = c["alpha"]
    if isinstance(alpha, list):
        alpha = float(np.mean(alpha))
    return float(alpha), float(c["beta"])


def load_split(manifest: DatasetManifest, split: str, original: bool = False) -> SegData:
    """Load one split as float32 arrays; ``original`` reads clean masks for corrupted samples."""
    recs = manifest.split(split)
    images, masks = [], []
    for r in recs:
        images.append(read_pgm(manifest.root / r.image_path).astype(np.float32) / 255.0)
        path = r.original_mask_path if original and r.original_mask_path else r.mask_path
        masks.append(read_mask(manifest.root / path).astype(np.float32))
    if not recs:
        return SegData([], np.zeros((0, 1, 0, 0), np.float32), np.zeros((0, 1, 0, 0), np.float32))
    return SegData([r.sample_id for r in recs], np.stack(images)[:, None], np.stack(masks)[:, None])
