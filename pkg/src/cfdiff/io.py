"""On-disk formats: 8-bit PGM images, run-length mask encodings, dataset splits.

PGM export maps [0, 1] to [0, 255] by clipping then rounding half to even
(``np.rint``). Masks are written as 0/255. Exact float data for each split
is kept next to the PGMs as ``.npy`` arrays, since PGM is lossy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .morphology import MaskSet
from .phantom import NONE, PhantomSample


def to_uint8(img) -> np.ndarray:
    return np.rint(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, img) -> None:
    a = np.asarray(img)
    data = (a.astype(np.uint8) * 255) if a.dtype == bool else to_uint8(a)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Returns intensities in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pos += 1
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return data.astype(float) / maxval


def rle_encode(mask) -> str:
    """``HxW:r0,r1,...`` alternating run lengths over the row-major mask, starting with a 0-run."""
    m = np.asarray(mask, dtype=bool)
    flat = m.ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return f"{m.shape[0]}x{m.shape[1]}:" + ",".join(map(str, runs))


def rle_decode(text: str) -> np.ndarray:
    dims, _, body = text.partition(":")
    h, w = (int(v) for v in dims.split("x"))
    runs = [int(v) for v in body.split(",")] if body else []
    flat = np.zeros(h * w, dtype=bool)
    pos, val = 0, False
    for r in runs:
        flat[pos:pos + r] = val
        pos += r
        val = not val
    if pos != h * w:
        raise ValueError(f"RLE covers {pos} pixels, expected {h * w}")
    return flat.reshape(h, w)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def file_inventory(root, exclude=()) -> dict[str, str]:
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_file() and rel not in exclude:
            out[rel] = sha256_file(p)
    return out


@dataclass
class Split:
    """Arrays for one dataset split, each with a leading sample axis."""

    images: np.ndarray
    brain: np.ndarray
    pathology: np.ndarray
    ventricles: np.ndarray
    sides: list[str]

    def __len__(self):
        return len(self.images)

    @classmethod
    def from_samples(cls, samples: list[PhantomSample], size: int | None = None) -> "Split":
        if not samples:
            shape = (0, size or 0, size or 0)
            return cls(np.zeros(shape), np.zeros(shape, bool), np.zeros(shape, bool), np.zeros(shape, bool), [])
        return cls(
            images=np.stack([s.image for s in samples]),
            brain=np.stack([s.masks.brain for s in samples]),
            pathology=np.stack([s.masks.pathology for s in samples]),
            ventricles=np.stack([s.ventricle_mask for s in samples]),
            sides=[s.lesion_side for s in samples],
        )

    def masks(self, i) -> MaskSet:
        return MaskSet(self.brain[i], self.pathology[i])


SPLIT_ARRAYS = ("images", "brain", "pathology", "ventricles")


def write_split(directory, samples: list[PhantomSample], size: int | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    split = Split.from_samples(samples, size)
    for name in SPLIT_ARRAYS:
        np.save(d / f"{name}.npy", getattr(split, name), allow_pickle=False)
    lines = ["# index file lesion_side lesion_area ventricle_left ventricle_right brain_rle lesion_rle ventricle_rle"]
    for i, s in enumerate(samples):
        fname = f"{i:04d}.pgm"
        write_pgm(d / fname, s.image)
        lines.append(" ".join([
            str(i), fname, s.lesion_side, str(s.lesion_area),
            str(s.ventricle_areas["left"]), str(s.ventricle_areas["right"]),
            rle_encode(s.masks.brain), rle_encode(s.masks.pathology), rle_encode(s.ventricle_mask),
        ]))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_split(directory) -> Split:
    d = Path(directory)
    if not (d / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset split at {d}")
    arrays = {name: np.load(d / f"{name}.npy", allow_pickle=False) for name in SPLIT_ARRAYS}
    sides = []
    for line in (d / "manifest.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            sides.append(line.split()[2])
    if len(sides) != len(arrays["images"]):
        raise ValueError(f"{d}: manifest lists {len(sides)} samples, arrays hold {len(arrays['images'])}")
    return Split(sides=sides, **arrays)


def lesion_free(split: Split) -> bool:
    return all(s == NONE for s in split.sides)
