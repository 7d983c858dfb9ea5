"""File persistence: binary feature/label containers, CSV dumps, JSON reports.

Binary layouts (little-endian throughout):

* feature file:  magic ``P2LRFS1\\0`` | u32 N | u32 d | N*d float64, row-major
* label file:    magic ``P2LRLB1\\0`` | u32 N | N u32

The CSV alternative uses a header row ``f0,...,f{d-1}`` with an optional
trailing ``label`` column.  All writers go through a write-temp-then-rename
step so a crashed process never leaves a truncated file behind.
"""

import csv
import json
import os
import struct
import tempfile

import numpy as np

from ._util import as_features, as_labels, as_scores
from .errors import FileFormatError, InputError

FEATURE_MAGIC = b"P2LRFS1\x00"
LABEL_MAGIC = b"P2LRLB1\x00"

_U32_MAX = 2**32 - 1


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write payload to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path: str, text: str) -> None:
    """Write a small text file atomically (temp file plus rename)."""
    _atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: str, obj) -> None:
    """Serialize obj to pretty-printed JSON, atomically.

    Key order is preserved as given, floats use the shortest lossless
    round-trip representation, and NaN/Inf are rejected so the output is
    byte-deterministic for equal inputs.
    """
    write_text(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_features(path: str, features) -> None:
    features = as_features(features)
    n, d = features.shape
    if n > _U32_MAX or d > _U32_MAX:
        raise InputError(f"feature matrix {n}x{d} exceeds u32 header range")
    header = FEATURE_MAGIC + struct.pack("<II", n, d)
    body = np.ascontiguousarray(features, dtype="<f8").tobytes()
    _atomic_write_bytes(path, header + body)


def read_features(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != FEATURE_MAGIC:
        raise FileFormatError(f"{path}: not a feature file (bad magic)")
    n, d = struct.unpack("<II", blob[8:16])
    expected = 16 + n * d * 8
    if len(blob) != expected:
        raise FileFormatError(
            f"{path}: expected {expected} bytes for {n}x{d}, found {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=16)
    return data.reshape(n, d).astype(np.float64)


def write_labels(path: str, labels) -> None:
    labels = as_labels(labels)
    if labels.size and (labels.min() < 0 or labels.max() > _U32_MAX):
        raise InputError("labels must fit in u32 (non-negative, < 2^32)")
    header = LABEL_MAGIC + struct.pack("<I", labels.shape[0])
    _atomic_write_bytes(path, header + labels.astype("<u4").tobytes())


def read_labels(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:8] != LABEL_MAGIC:
        raise FileFormatError(f"{path}: not a label file (bad magic)")
    (n,) = struct.unpack("<I", blob[8:12])
    if len(blob) != 12 + 4 * n:
        raise FileFormatError(f"{path}: expected {n} u32 labels")
    return np.frombuffer(blob, dtype="<u4", offset=12).astype(np.int64)


def write_features_csv(path: str, features, labels=None) -> None:
    """CSV form of the feature container, optional trailing label column."""
    features = as_features(features)
    n, d = features.shape
    if labels is not None:
        labels = as_labels(labels, n=n)
    rows = []
    header = [f"f{j}" for j in range(d)] + (["label"] if labels is not None else [])
    rows.append(",".join(header))
    for i in range(n):
        cells = [repr(v) for v in features[i].tolist()]
        if labels is not None:
            cells.append(str(int(labels[i])))
        rows.append(",".join(cells))
    write_text(path, "\n".join(rows) + "\n")


def read_features_csv(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Parse the CSV feature layout; returns (features, labels or None)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(f"{path}: empty CSV") from None
        has_label = bool(header) and header[-1] == "label"
        feat_cols = header[:-1] if has_label else header
        if not feat_cols or feat_cols != [f"f{j}" for j in range(len(feat_cols))]:
            raise FileFormatError(
                f"{path}: header must be f0..f{{d-1}}[,label], got {header[:4]}..."
            )
        d = len(feat_cols)
        feats: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}"
                )
            try:
                feats.append([float(v) for v in row[:d]])
                if has_label:
                    labels.append(int(row[d]))
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
    if not feats:
        raise FileFormatError(f"{path}: no data rows")
    features = as_features(np.asarray(feats), name=f"{path} features")
    return features, (np.asarray(labels, dtype=np.int64) if has_label else None)


def load_feature_file(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a feature file in either layout, sniffing the binary magic."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head == FEATURE_MAGIC:
        return read_features(path), None
    return read_features_csv(path)


def write_scores_csv(
    path: str,
    criterion: str,
    scores,
    pseudo_labels,
    corrupt_mask=None,
) -> None:
    """Score dump: ``sample_index,criterion,score,pseudo_label[,is_corrupted]``."""
    scores = as_scores(scores)
    pseudo_labels = as_labels(pseudo_labels, n=scores.shape[0], name="pseudo_labels")
    header = "sample_index,criterion,score,pseudo_label"
    if corrupt_mask is not None:
        corrupt_mask = np.asarray(corrupt_mask, dtype=bool)
        header += ",is_corrupted"
    lines = [header]
    for i in range(scores.shape[0]):
        line = f"{i},{criterion},{float(scores[i])!r},{int(pseudo_labels[i])}"
        if corrupt_mask is not None:
            line += f",{int(corrupt_mask[i])}"
        lines.append(line)
    write_text(path, "\n".join(lines) + "\n")


def write_selection_csv(path: str, rows) -> None:
    """Selection dump: ``step,sample_index,u,selected,beta,p_t`` per row.

    Each row is (step, sample_index, score, selected_value, threshold, fraction);
    a None threshold (criterion with no cutoff) becomes an empty cell.
    """
    lines = ["step,sample_index,u,selected,beta,p_t"]
    for step, idx, score, selected, threshold, fraction in rows:
        beta_cell = "" if threshold is None else repr(float(threshold))
        sel = int(selected) if float(selected) == int(selected) else repr(float(selected))
        lines.append(f"{step},{idx},{float(score)!r},{sel},{beta_cell},{float(fraction)!r}")
    write_text(path, "\n".join(lines) + "\n")
