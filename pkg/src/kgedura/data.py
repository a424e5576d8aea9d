"""Triple/quadruple ingestion, vocabularies, reciprocal augmentation and the
lookup structures used by training and filtered evaluation.

Input files are UTF-8, tab-separated, one fact per line:
``head<TAB>relation<TAB>tail`` for static graphs and
``head<TAB>relation<TAB>tail<TAB>timestamp`` for temporal ones.  Temporal
files may contain untimed lines (3 fields); those facts are mapped to a
reserved timestamp that is appended after all real timestamps.

Every product here is immutable after construction and safe to share across
evaluation workers.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError

NO_TIME_LABEL = "__no_time__"
RECIPROCAL_SUFFIX = "^-1"


@dataclass(frozen=True)
class Dataset:
    """Id-mapped splits plus the vocabularies that produced them.

    Relation ids below ``n_raw_relations`` are the original relations;
    after :func:`add_reciprocals` the inverse of relation ``j`` is
    ``j + n_raw_relations``.
    """

    ent2id: dict[str, int]
    rel2id: dict[str, int]
    ts2id: dict[str, int]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    temporal: bool
    n_raw_relations: int
    reciprocal_applied: bool = False

    @property
    def n_entities(self) -> int:
        return len(self.ent2id)

    @property
    def n_relations(self) -> int:
        return len(self.rel2id)

    @property
    def n_timestamps(self) -> int:
        return len(self.ts2id)

    @property
    def no_time_id(self) -> int | None:
        return self.ts2id.get(NO_TIME_LABEL)

    def splits(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def entity_labels(self) -> list[str]:
        return _labels_in_id_order(self.ent2id)

    def relation_labels(self) -> list[str]:
        return _labels_in_id_order(self.rel2id)

    def timestamp_labels(self) -> list[str]:
        return _labels_in_id_order(self.ts2id)


def _labels_in_id_order(vocab: dict[str, int]) -> list[str]:
    out = [""] * len(vocab)
    for label, idx in vocab.items():
        out[idx] = label
    return out


def _read_facts(path: str | Path, temporal: bool) -> list[tuple[str, str, str, str | None]]:
    facts: list[tuple[str, str, str, str | None]] = []
    want = "3 or 4" if temporal else "3"
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if temporal and len(parts) == 4:
                h, r, t, ts = parts
                facts.append((h, r, t, ts))
            elif len(parts) == 3:
                h, r, t = parts
                facts.append((h, r, t, None))
            else:
                raise DatasetError(
                    f"{path}:{lineno}: expected {want} tab-separated fields, "
                    f"got {len(parts)}"
                )
    return facts


def load_dataset(
    train_path: str | Path,
    valid_path: str | Path,
    test_path: str | Path,
    temporal: bool = False,
) -> Dataset:
    """Parse the three split files and build id-mapped splits.

    Entity and relation ids are assigned in first-seen order over
    train, valid, test.  Timestamp ids follow the sorted order of the
    timestamp strings so that consecutive ids are chronologically adjacent
    (the smoothness penalty relies on this); the reserved untimed slot, if
    needed, comes last.
    """
    raw = {
        "train": _read_facts(train_path, temporal),
        "valid": _read_facts(valid_path, temporal),
        "test": _read_facts(test_path, temporal),
    }
    if not raw["train"]:
        raise DatasetError(f"empty training split: {train_path}")

    ent2id: dict[str, int] = {}
    rel2id: dict[str, int] = {}
    for facts in raw.values():
        for h, r, t, _ in facts:
            if h not in ent2id:
                ent2id[h] = len(ent2id)
            if t not in ent2id:
                ent2id[t] = len(ent2id)
            if r not in rel2id:
                rel2id[r] = len(rel2id)

    ts2id: dict[str, int] = {}
    if temporal:
        stamps = sorted(
            {ts for facts in raw.values() for _, _, _, ts in facts if ts is not None}
        )
        if NO_TIME_LABEL in stamps:
            raise DatasetError(f"timestamp label {NO_TIME_LABEL!r} is reserved")
        ts2id = {s: i for i, s in enumerate(stamps)}
        if any(ts is None for facts in raw.values() for _, _, _, ts in facts):
            ts2id[NO_TIME_LABEL] = len(ts2id)

    width = 4 if temporal else 3
    arrays = {}
    for name, facts in raw.items():
        arr = np.empty((len(facts), width), dtype=np.int64)
        for i, (h, r, t, ts) in enumerate(facts):
            arr[i, 0] = ent2id[h]
            arr[i, 1] = rel2id[r]
            arr[i, 2] = ent2id[t]
            if temporal:
                arr[i, 3] = ts2id[ts] if ts is not None else ts2id[NO_TIME_LABEL]
        arrays[name] = arr

    return Dataset(
        ent2id=ent2id,
        rel2id=rel2id,
        ts2id=ts2id,
        train=arrays["train"],
        valid=arrays["valid"],
        test=arrays["test"],
        temporal=temporal,
        n_raw_relations=len(rel2id),
    )


def reciprocal_relation(rel_id: int, n_raw_relations: int) -> int:
    """Map a relation id to its inverse (an involution)."""
    if rel_id < n_raw_relations:
        return rel_id + n_raw_relations
    return rel_id - n_raw_relations


def add_reciprocals(ds: Dataset) -> Dataset:
    """Append the inverse fact (v, r^-1, u[, t]) for every fact in every
    split, doubling both the split sizes and the relation vocabulary.
    """
    if ds.reciprocal_applied:
        raise DatasetError("reciprocal augmentation already applied")

    n_raw = ds.n_raw_relations
    rel2id = dict(ds.rel2id)
    for label in ds.relation_labels():
        inv = label + RECIPROCAL_SUFFIX
        if inv in rel2id:
            raise DatasetError(f"relation label collision for {inv!r}")
        rel2id[inv] = len(rel2id)

    def augment(arr: np.ndarray) -> np.ndarray:
        rev = arr.copy()
        rev[:, 0] = arr[:, 2]
        rev[:, 2] = arr[:, 0]
        rev[:, 1] = arr[:, 1] + n_raw
        return np.concatenate([arr, rev], axis=0)

    return replace(
        ds,
        rel2id=rel2id,
        train=augment(ds.train),
        valid=augment(ds.valid),
        test=augment(ds.test),
        reciprocal_applied=True,
    )


class FilterIndex:
    """Known-true tail sets keyed by (head, relation[, time]) over all splits.

    Used by the filtered ranking protocol: every answer to a query except
    the one being scored is removed from the candidate pool.
    """

    def __init__(self, answers: dict[tuple[int, ...], np.ndarray]):
        self._answers = answers

    @classmethod
    def build(cls, *splits: np.ndarray) -> "FilterIndex":
        grouped: dict[tuple[int, ...], list[int]] = {}
        for arr in splits:
            for row in arr:
                key = (int(row[0]), int(row[1])) if len(row) == 3 else (
                    int(row[0]),
                    int(row[1]),
                    int(row[3]),
                )
                grouped.setdefault(key, []).append(int(row[2]))
        return cls(
            {k: np.unique(np.asarray(v, dtype=np.int64)) for k, v in grouped.items()}
        )

    def tails(self, key: tuple[int, ...]) -> np.ndarray:
        """Sorted array of known-true tails for the key (empty if unseen)."""
        return self._answers.get(tuple(key), _EMPTY_IDS)

    def __len__(self) -> int:
        return len(self._answers)

    def items(self):
        return self._answers.items()


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def build_filter_index(ds: Dataset) -> FilterIndex:
    """Group train+valid+test answers by query key for filtered ranking."""
    if not ds.reciprocal_applied:
        raise DatasetError(
            "filter index expects a reciprocal-augmented dataset "
            "(all queries are tail queries)"
        )
    return FilterIndex.build(ds.train, ds.valid, ds.test)


@dataclass(frozen=True)
class FrequencyTable:
    """How often each entity occurs as an answer in the training split."""

    counts: np.ndarray
    max_count: int

    @classmethod
    def from_train(cls, train: np.ndarray, n_entities: int) -> "FrequencyTable":
        counts = np.bincount(train[:, 2], minlength=n_entities).astype(np.int64)
        return cls(counts=counts, max_count=int(counts.max()) if len(counts) else 0)


def build_frequency_table(ds: Dataset) -> FrequencyTable:
    return FrequencyTable.from_train(ds.train, ds.n_entities)


def entity_weight(freq: FrequencyTable, entity_id: int, w0: float) -> float:
    """Loss weight w0 * (#v / max #v) + (1 - w0) for one entity."""
    return float(entity_weights(freq, np.asarray([entity_id]), w0)[0])


def entity_weights(freq: FrequencyTable, entity_ids: np.ndarray, w0: float) -> np.ndarray:
    """Vectorized form of :func:`entity_weight`."""
    if not 0.0 <= w0 <= 1.0:
        raise ConfigError(f"w0 must be in [0, 1], got {w0}")
    if freq.max_count <= 0:
        raise DatasetError("frequency table has no occurrences")
    counts = freq.counts[np.asarray(entity_ids)]
    return w0 * (counts / freq.max_count) + (1.0 - w0)


class RelationType(str, Enum):
    ONE_ONE = "1-1"
    ONE_N = "1-N"
    N_ONE = "N-1"
    N_N = "N-N"


_CARDINALITY_THRESHOLD = 1.5


@dataclass(frozen=True)
class RelationTypeMap:
    """Cardinality class per raw relation, with the mean tails-per-head and
    heads-per-tail used to assign it."""

    labels: list[RelationType]
    tph: np.ndarray
    hpt: np.ndarray

    @property
    def n_raw_relations(self) -> int:
        return len(self.labels)

    def query_type(self, rel_id: int) -> RelationType:
        """Type attributed to a query relation; the inverse direction of a
        1-N relation counts as N-1 and vice versa."""
        n_raw = self.n_raw_relations
        if rel_id < n_raw:
            return self.labels[rel_id]
        label = self.labels[rel_id - n_raw]
        if label is RelationType.ONE_N:
            return RelationType.N_ONE
        if label is RelationType.N_ONE:
            return RelationType.ONE_N
        return label


def classify_relations(train: np.ndarray, n_raw_relations: int) -> RelationTypeMap:
    """Label raw relations as 1-1 / 1-N / N-1 / N-N from the training split.

    tph is the number of distinct (head, tail) pairs divided by the number
    of distinct heads; hpt divides by distinct tails.  A relation is "N" on
    a side when the corresponding mean reaches 1.5.  Rows with reciprocal
    relation ids (>= n_raw_relations) are ignored.
    """
    pairs: list[set[tuple[int, int]]] = [set() for _ in range(n_raw_relations)]
    for row in train:
        r = int(row[1])
        if r < n_raw_relations:
            pairs[r].add((int(row[0]), int(row[2])))

    tph = np.zeros(n_raw_relations)
    hpt = np.zeros(n_raw_relations)
    labels = []
    for r, pr in enumerate(pairs):
        if not pr:
            warnings.warn(f"relation {r} has no training occurrences", stacklevel=2)
            labels.append(RelationType.ONE_ONE)
            continue
        heads = {h for h, _ in pr}
        tails = {t for _, t in pr}
        tph[r] = len(pr) / len(heads)
        hpt[r] = len(pr) / len(tails)
        many_tails = tph[r] >= _CARDINALITY_THRESHOLD
        many_heads = hpt[r] >= _CARDINALITY_THRESHOLD
        if many_tails and many_heads:
            labels.append(RelationType.N_N)
        elif many_tails:
            labels.append(RelationType.ONE_N)
        elif many_heads:
            labels.append(RelationType.N_ONE)
        else:
            labels.append(RelationType.ONE_ONE)
    return RelationTypeMap(labels=labels, tph=tph, hpt=hpt)


def write_vocab(ds: Dataset, out_dir: str | Path) -> list[Path]:
    """Dump entities.tsv / relations.tsv / timestamps.tsv as id<TAB>label."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    tables = [("entities.tsv", ds.entity_labels()), ("relations.tsv", ds.relation_labels())]
    if ds.temporal:
        tables.append(("timestamps.tsv", ds.timestamp_labels()))
    for name, labels in tables:
        path = out_dir / name
        with open(path, "w", encoding="utf-8") as fh:
            for idx, label in enumerate(labels):
                fh.write(f"{idx}\t{label}\n")
        written.append(path)
    return written


def vocab_hashes(ds: Dataset) -> dict[str, str]:
    """SHA-256 of each vocabulary in id order, for checkpoint sidecars."""
    def digest(labels: list[str]) -> str:
        h = hashlib.sha256()
        for label in labels:
            h.update(label.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()

    out = {"entities": digest(ds.entity_labels()), "relations": digest(ds.relation_labels())}
    if ds.temporal:
        out["timestamps"] = digest(ds.timestamp_labels())
    return out
