"""Open-vocabulary inference over precomputed embeddings.

Vision features (a global token, or a grid of patch tokens) are matched
against a bank of text embeddings by cosine similarity. Nothing here encodes
images or text; both sides arrive as vectors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ValidationError

BANK_MAGIC = b"AVFMEMB1"
_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True)
class EmbeddingBank:
    labels: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError("bank vectors must be a 2-D matrix")
        if len(labels) != vectors.shape[0]:
            raise ValidationError(
                f"{len(labels)} labels for {vectors.shape[0]} vectors"
            )
        if len(set(labels)) != len(labels):
            raise ValidationError("bank labels must be unique")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("bank contains NaN or Inf entries")
        vectors.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def subset(self, labels: Sequence[str]) -> EmbeddingBank:
        """Rows for ``labels``, kept in bank order."""
        wanted = set(labels)
        unknown = wanted.difference(self.labels)
        if unknown:
            raise ValidationError(f"labels not in bank: {sorted(unknown)}")
        keep = [i for i, label in enumerate(self.labels) if label in wanted]
        return EmbeddingBank(tuple(self.labels[i] for i in keep), self.vectors[keep])

    def to_bytes(self) -> bytes:
        count, dim = self.vectors.shape
        body = self.vectors.astype("<f4", copy=False).tobytes(order="C")
        names = json.dumps(list(self.labels), ensure_ascii=False).encode("utf-8")
        return _HEADER.pack(BANK_MAGIC, count, dim) + body + names

    @classmethod
    def from_bytes(cls, blob: bytes) -> EmbeddingBank:
        if len(blob) < _HEADER.size:
            raise ValidationError("embedding bank truncated before header end")
        magic, count, dim = _HEADER.unpack_from(blob)
        if magic != BANK_MAGIC:
            raise ValidationError(f"bad embedding bank magic {magic!r}")
        n_float_bytes = 4 * count * dim
        end = _HEADER.size + n_float_bytes
        if len(blob) < end:
            raise ValidationError("embedding bank truncated inside the vector block")
        vectors = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=_HEADER.size)
        try:
            labels = json.loads(blob[end:].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValidationError(f"bad embedding bank label block: {exc}") from exc
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise ValidationError("label block must be a JSON array of strings")
        return cls(tuple(labels), vectors.reshape(count, dim).astype(np.float32))


def save_bank(bank: EmbeddingBank, path: str | Path) -> None:
    Path(path).write_bytes(bank.to_bytes())


def load_bank(path: str | Path) -> EmbeddingBank:
    return EmbeddingBank.from_bytes(Path(path).read_bytes())


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    return matrix / norms


def similarity_matrix(queries, bank: EmbeddingBank) -> np.ndarray:
    """Cosine similarity of every query row against every bank row."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[-1] != bank.dim:
        raise ValidationError(f"query dim {q.shape[-1]} != bank dim {bank.dim}")
    if np.any(np.linalg.norm(q, axis=-1) == 0.0):
        raise ValidationError("query contains a zero vector")
    b = bank.vectors.astype(np.float64)
    bn = np.linalg.norm(b, axis=-1)
    if np.any(bn == 0.0):
        raise ValidationError("bank contains a zero vector")
    return np.clip(_unit_rows(q) @ (b / bn[:, None]).T, -1.0, 1.0)


def classify(vision_vec, text_bank: EmbeddingBank, top_k: int = 5) -> list[tuple[str, float]]:
    """Bank labels ranked by cosine similarity, ties kept in bank order."""
    if len(text_bank) == 0:
        raise ValidationError("cannot classify against an empty bank")
    sims = similarity_matrix(vision_vec, text_bank)[0]
    order = np.argsort(-sims, kind="stable")[: max(0, int(top_k))]
    return [(text_bank.labels[i], float(sims[i])) for i in order]


@dataclass(frozen=True)
class SegmentationMap:
    class_indices: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        idx = np.asarray(self.class_indices)
        if idx.ndim != 2 or idx.shape[0] == 0 or idx.shape[1] == 0:
            raise ValidationError("segmentation map must be a non-empty 2-D grid")
        if not np.issubdtype(idx.dtype, np.integer):
            raise ValidationError("segmentation map entries must be integers")
        if idx.min() < 0:
            raise ValidationError("segmentation map contains negative indices")
        if self.labels and idx.max() >= len(self.labels):
            raise ValidationError("segmentation map index exceeds label count")
        idx = idx.astype(np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "class_indices", idx)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def height(self) -> int:
        return self.class_indices.shape[0]

    @property
    def width(self) -> int:
        return self.class_indices.shape[1]


def segment(patch_grid, text_bank: EmbeddingBank, out_size: tuple[int, int] | None = None) -> SegmentationMap:
    """Per-patch cosine argmax, nearest-neighbour upsampled to ``out_size`` (H, W)."""
    grid = np.asarray(patch_grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValidationError("patch grid must have shape (H, W, dim)")
    hp, wp, dim = grid.shape
    if len(text_bank) == 0:
        raise ValidationError("cannot segment against an empty bank")
    if dim != text_bank.dim:
        raise ValidationError(f"patch dim {dim} != bank dim {text_bank.dim}")
    zero = np.argwhere(np.linalg.norm(grid, axis=-1) == 0.0)
    if len(zero):
        r, c = zero[0]
        raise ValidationError(f"zero feature vector at patch ({int(r)}, {int(c)})")
    sims = similarity_matrix(grid.reshape(-1, dim), text_bank)
    patch_idx = np.argmax(sims, axis=1).reshape(hp, wp)
    h, w = out_size if out_size is not None else (hp, wp)
    if h <= 0 or w <= 0:
        raise ValidationError("output size must be positive")
    rows = (np.arange(h) * hp) // h
    cols = (np.arange(w) * wp) // w
    return SegmentationMap(patch_idx[np.ix_(rows, cols)], text_bank.labels)


def _confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    valid = gt != num_classes
    if np.any(pred[valid] >= num_classes) or np.any(gt[valid] > num_classes):
        raise ValidationError(f"label index out of range for {num_classes} classes")
    flat = gt[valid] * num_classes + pred[valid]
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def per_class_iou(pred, gt, num_classes: int) -> np.ndarray:
    """IoU per class; NaN where the class has empty union."""
    p = np.asarray(getattr(pred, "class_indices", pred), dtype=np.int64)
    g = np.asarray(getattr(gt, "class_indices", gt), dtype=np.int64)
    if p.shape != g.shape:
        raise ValidationError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    conf = _confusion(p.ravel(), g.ravel(), num_classes)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def miou(pred, gt, num_classes: int) -> float:
    """Mean IoU over classes with nonzero union; ``num_classes`` in gt is ignored."""
    ious = per_class_iou(pred, gt, num_classes)
    present = ~np.isnan(ious)
    if not present.any():
        raise ValidationError("no class has a nonzero union")
    return float(ious[present].mean())


def acc_at_1(preds: Sequence, gts: Sequence) -> float:
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} predictions for {len(gts)} targets")
    if not len(gts):
        raise ValidationError("acc@1 of an empty set is undefined")
    return sum(p == g for p, g in zip(preds, gts)) / len(gts)


def write_pgm(seg: SegmentationMap, path: str | Path, num_classes: int | None = None) -> None:
    """Binary PGM with maxval = class count, plus a ``.json`` label sidecar."""
    maxval = num_classes if num_classes is not None else max(len(seg.labels), 1)
    if not 0 < maxval < 65536:
        raise ValidationError("PGM maxval must be in 1..65535")
    dtype = ">u1" if maxval < 256 else ">u2"
    header = f"P5\n{seg.width} {seg.height}\n{maxval}\n".encode("ascii")
    path = Path(path)
    path.write_bytes(header + seg.class_indices.astype(dtype).tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"labels": list(seg.labels)}) + "\n", encoding="utf-8")


def read_pgm(path: str | Path) -> SegmentationMap:
    path = Path(path)
    blob = path.read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValidationError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5)")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    data = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos)
    labels: tuple[str, ...] = ()
    sidecar = path.with_suffix(path.suffix + ".json")
    if sidecar.exists():
        labels = tuple(json.loads(sidecar.read_text(encoding="utf-8")).get("labels", []))
    return SegmentationMap(data.reshape(height, width).astype(np.int64), labels)
