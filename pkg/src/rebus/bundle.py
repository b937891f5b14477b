"""Model bundle: hyperparameters, pattern set, float32 embeddings and biases in one binary file."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Hyperparams, ModelParams
from .seqmine import PatternSet

MAGIC = b"REBUSMDL"
FORMAT_VERSION = 1
_HEAD = struct.Struct("<8sIII")


@dataclass
class ModelBundle:
    hyper: Hyperparams
    params: ModelParams
    patterns: PatternSet | None = None
    metadata: dict = field(default_factory=dict)


def bundle_bytes(b: ModelBundle) -> bytes:
    P = np.ascontiguousarray(b.params.embeddings, dtype="<f4")
    beta = np.ascontiguousarray(b.params.biases, dtype="<f4")
    n_items, k = P.shape
    hyper = json.dumps(b.hyper.to_dict(), sort_keys=True).encode()
    out = [_HEAD.pack(MAGIC, FORMAT_VERSION, n_items, k), struct.pack("<Q", len(hyper)), hyper]
    pats = b.patterns.items() if b.patterns is not None else []
    has = b.patterns is not None
    out.append(struct.pack("<BQII", has, len(pats),
                           b.patterns.min_count if has else 0, b.patterns.max_size if has else 0))
    for p, c in pats:
        out.append(struct.pack("<I", len(p)))
        out.append(np.asarray(p, dtype="<i4").tobytes())
        out.append(struct.pack("<I", c))
    out.append(P.tobytes())
    out.append(beta.tobytes())
    return b"".join(out)


def save_bundle(b: ModelBundle, path) -> Path:
    """Write the binary bundle and a ``.json`` metadata sidecar."""
    path = Path(path)
    data = bundle_bytes(b)
    path.write_bytes(data)
    meta = {"format": "rebusmodel", "version": FORMAT_VERSION, "sha256": hashlib.sha256(data).hexdigest(),
            "num_parameters": b.params.num_parameters, **b.metadata}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    buf = path.read_bytes()
    magic, version, n_items, k = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model bundle")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported bundle version {version}")
    pos = _HEAD.size
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    hyper = Hyperparams.from_dict(json.loads(buf[pos:pos + n]))
    pos += n
    has, n_pat, min_count, max_size = struct.unpack_from("<BQII", buf, pos)
    pos += struct.calcsize("<BQII")
    support = {}
    for _ in range(n_pat):
        (ln,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        items = tuple(int(i) for i in np.frombuffer(buf, dtype="<i4", count=ln, offset=pos))
        pos += 4 * ln
        (c,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        support[items] = c
    patterns = PatternSet(support, min_count, max_size) if has else None
    P = np.frombuffer(buf, dtype="<f4", count=n_items * k, offset=pos).reshape(n_items, k).astype(np.float64)
    pos += 4 * n_items * k
    beta = np.frombuffer(buf, dtype="<f4", count=n_items, offset=pos).astype(np.float64)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return ModelBundle(hyper, ModelParams(P, beta), patterns, meta)


def quantized(params: ModelParams) -> ModelParams:
    """Parameters as they are after a save/load round trip."""
    return ModelParams(params.embeddings.astype(np.float32).astype(np.float64),
                       params.biases.astype(np.float32).astype(np.float64))
