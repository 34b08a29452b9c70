"""Turn raw instances into maskable feature sets and render explanations.

Three modalities are supported.  Tabular rows mask a column by replacing it
with a baseline value; token lists drop masked tokens; images fill every
pixel of a masked segment with a constant colour.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ModalityError, ValidationError


class Modality(str, Enum):
    TABULAR = "tabular"
    TEXT = "text"
    IMAGE = "image"


@dataclass(frozen=True, eq=False)
class AdaptedInstance:
    modality: Modality
    n: int
    columns: np.ndarray | None = None
    baseline: np.ndarray | None = None
    tokens: tuple[str, ...] | None = None
    pixels: np.ndarray | None = None
    segments: np.ndarray | None = None
    fill: str = "mean"
    path: str | None = None
    labels: tuple[str, ...] | None = None

    @property
    def fill_value(self) -> np.ndarray:
        """Colour painted over masked segments."""
        if self.modality is not Modality.IMAGE:
            raise ModalityError("fill colour only applies to images")
        if self.fill == "zero":
            return np.zeros(self.pixels.shape[2])
        return self.pixels.reshape(-1, self.pixels.shape[2]).mean(axis=0)


def tabular(values, baseline=None, labels=None) -> AdaptedInstance:
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 1:
        raise ValidationError("a tabular instance needs at least one column")
    baseline = np.zeros_like(values) if baseline is None else np.asarray(baseline, dtype=float).ravel()
    if baseline.shape != values.shape:
        raise ValidationError(f"baseline has {baseline.size} entries for {values.size} columns")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(baseline))):
        raise ValidationError("tabular values must be finite")
    return AdaptedInstance(Modality.TABULAR, values.size, columns=values, baseline=baseline,
                           labels=None if labels is None else tuple(labels))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float body of a CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError(f"{path}: expected a header and at least one data row")
    header, body = rows[0], rows[1:]
    if any(len(r) != len(header) for r in body):
        raise FormatError(f"{path}: ragged rows")
    try:
        data = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return header, data


def load_csv(path, row: int = 0, baseline="mean") -> AdaptedInstance:
    """One CSV row as an instance; ``baseline`` is "mean", "zero" or explicit values."""
    header, data = read_csv(path)
    if not 0 <= row < len(data):
        raise ValidationError(f"row {row} out of range for {len(data)} data rows")
    if isinstance(baseline, str):
        if baseline == "mean":
            baseline = data.mean(axis=0)
        elif baseline == "zero":
            baseline = np.zeros(data.shape[1])
        else:
            raise ValidationError(f"unknown baseline {baseline!r}")
    return tabular(data[row], baseline, labels=header)


def text(tokens) -> AdaptedInstance:
    tokens = tuple(tokens)
    if not tokens:
        raise ValidationError("a text instance needs at least one token")
    if any(not isinstance(t, str) or not t for t in tokens):
        raise ValidationError("tokens must be non-empty strings")
    labels = tokens if len(set(tokens)) == len(tokens) else tuple(f"{t}@{i}" for i, t in enumerate(tokens))
    return AdaptedInstance(Modality.TEXT, len(tokens), tokens=tokens, labels=labels)


def load_tokens(path) -> AdaptedInstance:
    with open(path, encoding="utf-8") as fh:
        tokens = json.load(fh)
    if not isinstance(tokens, list):
        raise FormatError(f"{path}: expected a JSON array of strings")
    return text(tokens)


# -- images ----------------------------------------------------------------------

def check_segments(segments) -> np.ndarray:
    seg = np.asarray(segments)
    if seg.ndim != 2 or seg.size == 0:
        raise FormatError("segment map must be a non-empty 2-D array")
    if not np.issubdtype(seg.dtype, np.integer):
        raise FormatError("segment labels must be integers")
    n = int(seg.max()) + 1
    if seg.min() < 0 or len(np.unique(seg)) != n:
        raise ValidationError("segment labels must be exactly 0..n-1, each used at least once")
    return seg.astype(np.int64)


def relabel(labels) -> np.ndarray:
    """Dense labels 0..n-1 in order of first appearance (row-major)."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels.ravel(), return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse].reshape(labels.shape)


def grid_segment(width: int, height: int, rows: int, cols: int) -> np.ndarray:
    """Row-major rectangular segments; leftover pixels join the last row/column."""
    width, height, rows, cols = int(width), int(height), int(rows), int(cols)
    if min(width, height, rows, cols) < 1:
        raise ValidationError("image size and grid shape must be positive")
    if rows > height or cols > width:
        raise ValidationError(f"{rows}x{cols} grid does not fit a {height}x{width} image")
    r = np.minimum(np.arange(height) // (height // rows), rows - 1)
    c = np.minimum(np.arange(width) // (width // cols), cols - 1)
    return r[:, None] * cols + c[None, :]


_PNM_TOKEN = re.compile(rb"#[^\n]*\n?|\s+")


def _read_pgm_labels(raw: bytes) -> np.ndarray:
    """Raw sample values of a P2/P5 graymap, without any rescaling."""
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError("segment map PGM must be P2 or P5")
    pos, header = 2, []
    while len(header) < 3:
        m = _PNM_TOKEN.match(raw, pos)
        if m:
            pos = m.end()
            continue
        end = pos
        while end < len(raw) and raw[end:end + 1].isdigit():
            end += 1
        if end == pos:
            raise FormatError("malformed PGM header")
        header.append(int(raw[pos:end]))
        pos = end
    width, height, maxval = header
    if magic == b"P2":
        vals = [int(t) for t in raw[pos:].split() if not t.startswith(b"#")]
        data = np.array(vals, dtype=np.int64)
    else:
        dtype = ">u2" if maxval > 255 else "u1"
        body = raw[pos + 1:]
        data = np.frombuffer(body, dtype=dtype, count=width * height).astype(np.int64)
    if data.size != width * height:
        raise FormatError(f"PGM holds {data.size} samples, header says {width}x{height}")
    return data.reshape(height, width)


def load_segment_map(source) -> np.ndarray:
    """Segment labels from a JSON 2-D array or a PGM file, relabelled densely."""
    if isinstance(source, (list, tuple, np.ndarray)):
        arr = source
    else:
        raw = Path(source).read_bytes()
        if raw[:1] == b"P":
            arr = _read_pgm_labels(raw)
        else:
            try:
                arr = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{source}: not a JSON array or PGM ({exc})") from None
    if isinstance(arr, list):
        if not arr or not all(isinstance(r, list) for r in arr) or len({len(r) for r in arr}) != 1:
            raise FormatError("segment map must be a rectangular 2-D array")
        if any(not isinstance(x, int) or isinstance(x, bool) for r in arr for x in r):
            raise FormatError("segment labels must be integers")
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.size == 0:
        raise FormatError("segment map must be a non-empty rectangular 2-D array")
    return check_segments(relabel(arr))


def write_pgm(path, segments):
    """Write labels as a plain (P2) graymap."""
    seg = np.asarray(segments, dtype=np.int64)
    h, w = seg.shape
    lines = [f"P2\n{w} {h}\n{max(int(seg.max()), 1)}"]
    lines += [" ".join(str(int(x)) for x in row) for row in seg]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_image(path) -> np.ndarray:
    """PPM/PGM (or anything Pillow opens) as an ``(H, W, 3)`` float array in 0..255."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float)


def image(pixels, segments, fill: str = "mean", path=None) -> AdaptedInstance:
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.ndim != 3:
        raise ValidationError("image must be (H, W) or (H, W, C)")
    seg = check_segments(segments)
    if seg.shape != pixels.shape[:2]:
        raise ValidationError(f"segment map {seg.shape} does not match image {pixels.shape[:2]}")
    if fill not in ("mean", "zero"):
        raise ValidationError(f"fill must be 'mean' or 'zero', got {fill!r}")
    n = int(seg.max()) + 1
    return AdaptedInstance(Modality.IMAGE, n, pixels=pixels, segments=seg, fill=fill,
                           path=None if path is None else str(path))


def load_image(path, segments, fill: str = "mean") -> AdaptedInstance:
    if isinstance(segments, dict) and "grid" in segments:
        rows, cols = segments["grid"]
        pixels = read_image(path)
        seg = grid_segment(pixels.shape[1], pixels.shape[0], rows, cols)
        return image(pixels, seg, fill, path)
    return image(read_image(path), load_segment_map(segments), fill, path)


# -- masking ---------------------------------------------------------------------

def _check_mask(instance, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != instance.n:
        raise ValidationError(f"mask has {mask.size} entries for {instance.n} segments")
    return mask


def apply_mask(instance: AdaptedInstance, mask):
    """Perturbed copy of the instance's payload."""
    mask = _check_mask(instance, mask)
    if instance.modality is Modality.TABULAR:
        return np.where(mask, instance.columns, instance.baseline)
    if instance.modality is Modality.TEXT:
        return [t for t, keep in zip(instance.tokens, mask) if keep]
    out = instance.pixels.copy()
    hidden = ~mask[instance.segments]
    out[hidden] = instance.fill_value
    return out


def wire_payload(instance: AdaptedInstance, mask):
    """JSON-ready payload for an external model."""
    mask = _check_mask(instance, mask)
    if instance.modality is Modality.TABULAR:
        return [float(x) for x in apply_mask(instance, mask)]
    if instance.modality is Modality.TEXT:
        return apply_mask(instance, mask)
    if instance.path is None:
        raise ValidationError("image instances need a file path to be sent to an external model")
    return {"path": instance.path, "masked_segments": [int(j) for j in np.flatnonzero(~mask)]}


# -- overlays --------------------------------------------------------------------

@dataclass(frozen=True)
class OverlayStyle:
    """``mode`` is "topk" (keep ``k`` best segments bright) or "heat" (linear ramp)."""

    mode: str = "heat"
    k: int = 1
    dim: float = 0.3

    def __post_init__(self):
        if self.mode not in ("topk", "heat"):
            raise ValidationError(f"unknown overlay mode {self.mode!r}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if not 0.0 <= self.dim <= 1.0:
            raise ValidationError("dim must be in [0, 1]")


def segment_intensity(phi, style: OverlayStyle) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    n = phi.size
    if style.mode == "topk":
        if style.k > n:
            raise ValidationError(f"k={style.k} exceeds {n} segments")
        order = sorted(range(n), key=lambda i: (-phi[i], i))
        out = np.full(n, style.dim)
        out[order[:style.k]] = 1.0
        return out
    lo, hi = phi.min(), phi.max()
    if hi == lo:
        return np.ones(n)
    return style.dim + (1.0 - style.dim) * (phi - lo) / (hi - lo)


def render_overlay(instance: AdaptedInstance, attribution, style: OverlayStyle, out) -> Path:
    """Write a dimmed copy of the image (PPM) and a ``.json`` ranking sidecar."""
    if instance.modality is not Modality.IMAGE:
        raise ModalityError("overlays can only be rendered for image instances")
    phi = np.asarray(getattr(attribution, "phi", attribution), dtype=float)
    if phi.size != instance.n:
        raise ValidationError(f"{phi.size} scores for {instance.n} segments")
    scale = segment_intensity(phi, style)[instance.segments]
    pix = instance.pixels
    if pix.shape[2] == 1:
        pix = np.repeat(pix, 3, axis=2)
    rgb = np.clip(np.rint(pix[:, :, :3] * scale[:, :, None]), 0, 255).astype(np.uint8)
    out = Path(out)
    Image.fromarray(rgb, "RGB").save(out, format="PPM")
    ranking = sorted(range(phi.size), key=lambda i: (-phi[i], i))
    sidecar = {"ranking": ranking, "phi": [float(x) for x in phi]}
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")
    return out
