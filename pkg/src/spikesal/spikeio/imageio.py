"""8-bit grayscale image and dataset-directory I/O.

Frames and masks are exchanged as PGM (P5, maxval 255) or PNG. A dataset
directory holds one subdirectory per sample:

    dataset/
      meta.json                 generator parameters
      sample_000/
        meta.json               scenario and shape info
        frames/t0000.pgm        luminance, gray = round(255 * value)
        masks/t0000.pgm         ground truth, 0 or 255
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .synthetic import SyntheticSample

__all__ = [
    "read_gray",
    "write_gray",
    "write_pgm",
    "read_pgm",
    "save_dataset",
    "load_dataset",
    "load_clip_dir",
]


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got ndim={img.ndim}")
    data = img.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=m.end())
    if pixels.size < w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()


def read_gray(path: str | Path) -> np.ndarray:
    """Read a grayscale image (PGM or PNG) as uint8 [H, W]."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def write_gray(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        write_pgm(path, img)
        return
    from PIL import Image

    Image.fromarray(np.asarray(img).astype(np.uint8), mode="L").save(path)


def _tick_key(p: Path) -> int:
    m = re.search(r"(\d+)", p.stem)
    if not m:
        raise ValueError(f"cannot order frame file {p.name}: no tick number in name")
    return int(m.group(1))


def load_clip_dir(path: str | Path) -> np.ndarray:
    """Directory of gray frames -> luminance array [T, H, W] in [0, 1]."""
    path = Path(path)
    files = sorted(
        (p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".png")),
        key=_tick_key,
    )
    if not files:
        raise ValueError(f"{path}: no .pgm or .png frames found")
    frames = np.stack([read_gray(p) for p in files])
    return frames.astype(np.float64) / 255.0


def save_dataset(samples: list[SyntheticSample], out_dir: str | Path, meta: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.json").write_text(json.dumps(meta or {}, indent=2, sort_keys=True) + "\n")
    for s in samples:
        sdir = out / s.name
        (sdir / "frames").mkdir(parents=True, exist_ok=True)
        (sdir / "masks").mkdir(parents=True, exist_ok=True)
        info = {"scenario": s.scenario, **s.meta}
        (sdir / "meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        for t in range(s.frames.shape[0]):
            write_pgm(sdir / "frames" / f"t{t:04d}.pgm", np.round(s.frames[t] * 255.0))
            write_pgm(sdir / "masks" / f"t{t:04d}.pgm", s.masks[t] * 255)


def load_dataset(path: str | Path) -> list[SyntheticSample]:
    path = Path(path)
    samples = []
    for sdir in sorted(p for p in path.iterdir() if p.is_dir()):
        frames = load_clip_dir(sdir / "frames")
        mask_dir = sdir / "masks"
        masks = None
        if mask_dir.is_dir():
            masks = (load_clip_dir(mask_dir) > 0.5).astype(np.uint8)
        meta_file = sdir / "meta.json"
        meta = json.loads(meta_file.read_text()) if meta_file.exists() else {}
        scenario = meta.pop("scenario", "unknown")
        if masks is None:
            masks = np.zeros_like(frames, dtype=np.uint8)
        samples.append(SyntheticSample(name=sdir.name, scenario=scenario, frames=frames, masks=masks, meta=meta))
    if not samples:
        raise ValueError(f"{path}: no sample directories found")
    return samples
