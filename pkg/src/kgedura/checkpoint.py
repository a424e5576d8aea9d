"""Binary checkpoint format for model parameters.

Layout (little-endian):

* magic ``KGEC`` (4 bytes)
* format version, u32
* model kind tag, u8  (cp=0, complex=1, rescal=2, tcomplex=3, trescal=4)
* D, |E|, |R|, |T| as u32 each
* parameter tables as row-major float32, in the fixed order
  head, tail, relations, timestamps; models with a shared entity table
  store it once (the kind tag determines which tables follow), and |T|=0
  marks the absence of timestamp parameters.

A sidecar text file ``<path>.vocab`` records vocabulary hashes so a
checkpoint can be matched against the dataset it was trained on.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .models import ModelKind, ModelParams

MAGIC = b"KGEC"
VERSION = 1

_KIND_TAGS = {
    ModelKind.CP: 0,
    ModelKind.COMPLEX: 1,
    ModelKind.RESCAL: 2,
    ModelKind.TCOMPLEX: 3,
    ModelKind.TRESCAL: 4,
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

_HEADER = struct.Struct("<4sIBIIII")


def _tables_in_order(params: ModelParams) -> list[np.ndarray]:
    tables = [params.head]
    if not params.kind.shares_entity_table:
        tables.append(params.tail)
    tables.append(params.relations)
    if params.times is not None:
        tables.append(params.times)
    return tables


def save_checkpoint(
    params: ModelParams,
    path: str | Path,
    vocab_hashes: dict[str, str] | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        _KIND_TAGS[params.kind],
        params.dim,
        params.n_entities,
        params.n_relations,
        params.n_timestamps,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for table in _tables_in_order(params):
            fh.write(np.ascontiguousarray(table, dtype="<f4").tobytes())
    if vocab_hashes:
        with open(str(path) + ".vocab", "w", encoding="utf-8") as fh:
            for name, digest in sorted(vocab_hashes.items()):
                fh.write(f"{name}\t{digest}\n")
    return path


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, tag, dim, n_ent, n_rel, n_ts = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if tag not in _TAG_KINDS:
        raise CheckpointError(f"{path}: unknown model kind tag {tag}")
    kind = _TAG_KINDS[tag]

    shapes: list[tuple[int, ...]] = [(n_ent, dim)]
    if not kind.shares_entity_table:
        shapes.append((n_ent, dim))
    if kind.has_matrix_relations:
        shapes.append((n_rel, dim, dim))
    else:
        shapes.append((n_rel, dim))
    if kind is ModelKind.TCOMPLEX:
        shapes.append((n_ts, dim))
    elif kind is ModelKind.TRESCAL:
        shapes.append((n_ts, dim, dim))

    offset = _HEADER.size
    tables = []
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated table data")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tables.append(arr.reshape(shape).astype(np.float32))
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")

    head = tables[0]
    if kind.shares_entity_table:
        tail = head
        rest = tables[1:]
    else:
        tail = tables[1]
        rest = tables[2:]
    relations = rest[0]
    times = rest[1] if len(rest) > 1 else None
    return ModelParams(kind=kind, dim=dim, head=head, tail=tail,
                       relations=relations, times=times)


def read_vocab_sidecar(path: str | Path) -> dict[str, str]:
    sidecar = Path(str(path) + ".vocab")
    out: dict[str, str] = {}
    if not sidecar.exists():
        return out
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        if line.strip():
            name, digest = line.split("\t")
            out[name] = digest
    return out
