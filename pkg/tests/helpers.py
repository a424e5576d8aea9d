"""Shared test utilities: in-memory datasets, synthetic graphs with cluster
structure, a finite-difference gradient harness and an independent
sort-based ranking oracle."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from kgedura.data import Dataset
from kgedura.models import (ModelKind, ModelParams, all_scores, backward,
                            forward_queries, init_params)
from kgedura.regularizers import (RegKind, RegSpec, SmootherKind,
                                  penalty_batch, timestamp_smoother_grad)
from kgedura.training import _wce_batch


def find_dataset(name: str) -> Path | None:
    """Locate a benchmark corpus under $KGE_DATA_DIR/<name> or data/<name>."""
    roots = []
    env = os.environ.get("KGE_DATA_DIR")
    if env:
        roots.append(Path(env) / name)
    roots.append(Path(__file__).resolve().parent.parent / "data" / name)
    for root in roots:
        if all((root / f).exists() for f in ("train.txt", "valid.txt", "test.txt")):
            return root
    return None


def require_dataset(name: str) -> Path:
    root = find_dataset(name)
    if root is None:
        pytest.skip(
            f"{name} files not found and the build environment has no "
            f"network access; place train.txt/valid.txt/test.txt under "
            f"data/{name} or $KGE_DATA_DIR/{name} to run this test"
        )
    return root


def dataset_from_arrays(
    train: np.ndarray,
    valid: np.ndarray,
    test: np.ndarray,
    n_entities: int,
    n_relations: int,
    temporal: bool = False,
    n_timestamps: int = 0,
) -> Dataset:
    """Wrap already-id-mapped split arrays in a Dataset."""
    return Dataset(
        ent2id={f"e{i}": i for i in range(n_entities)},
        rel2id={f"r{i}": i for i in range(n_relations)},
        ts2id={f"t{i}": i for i in range(n_timestamps)} if temporal else {},
        train=np.asarray(train, dtype=np.int64),
        valid=np.asarray(valid, dtype=np.int64),
        test=np.asarray(test, dtype=np.int64),
        temporal=temporal,
        n_raw_relations=n_relations,
    )


def random_kg(
    rng: np.random.Generator,
    n_entities: int = 8,
    n_relations: int = 3,
    n_facts: int = 30,
    temporal: bool = False,
    n_timestamps: int = 4,
) -> Dataset:
    """Uniformly random facts split 70/15/15, deduplicated.  The fact count
    is capped at half the space of possible facts so sampling terminates."""
    space = n_entities * n_relations * n_entities
    if temporal:
        space *= n_timestamps
    n_facts = max(4, min(n_facts, space // 2))
    seen = set()
    while len(seen) < n_facts:
        fact = (
            int(rng.integers(n_entities)),
            int(rng.integers(n_relations)),
            int(rng.integers(n_entities)),
        )
        if temporal:
            fact += (int(rng.integers(n_timestamps)),)
        seen.add(fact)
    facts = np.array(sorted(seen), dtype=np.int64)
    rng.shuffle(facts)
    n_valid = max(1, n_facts * 15 // 100)
    n_test = max(1, n_facts * 15 // 100)
    valid, test, train = (
        facts[:n_valid],
        facts[n_valid:n_valid + n_test],
        facts[n_valid + n_test:],
    )
    assert len(train) > 0
    return dataset_from_arrays(train, valid, test, n_entities, n_relations,
                               temporal, n_timestamps)


def injective_kg(
    rng: np.random.Generator,
    n_entities: int = 12,
    n_relations: int = 2,
    pairs_per_relation: int = 12,
    n_train: int = 20,
) -> Dataset:
    """Every relation is a partial bijection, so each (head, relation) and
    each (tail, inverse-relation) query has exactly one answer and the
    cross-entropy can be driven to zero by memorization."""
    facts = []
    for r in range(n_relations):
        perm = rng.permutation(n_entities)
        for i in range(pairs_per_relation):
            facts.append((i, r, int(perm[i])))
    rng.shuffle(facts)
    facts = np.asarray(facts, dtype=np.int64)
    train = facts[:n_train]
    rest = facts[n_train:]
    half = max(1, len(rest) // 2)
    return dataset_from_arrays(train, rest[:half], rest[half:],
                               n_entities, n_relations)


def clustered_kg(
    rng: np.random.Generator,
    n_entities: int = 120,
    n_clusters: int = 8,
    n_relations: int = 6,
    n_facts: int = 1600,
    temporal: bool = False,
    n_timestamps: int = 8,
    drift: int = 2,
) -> Dataset:
    """A graph whose tails are determined by cluster structure, so held-out
    facts are predictable from it; memorizing models generalize poorly here,
    which makes the benefit of regularization measurable at desk scale.

    Entities are split evenly into clusters and each relation maps head
    clusters to tail clusters.  Temporal graphs evolve that map mildly
    between consecutive timestamps (``drift`` entries change per step), so
    nearby timestamps answer similarly.
    """
    cluster = np.arange(n_entities) % n_clusters
    rng.shuffle(cluster)
    members = [np.flatnonzero(cluster == c) for c in range(n_clusters)]
    maps = [rng.integers(0, n_clusters, size=(n_relations, n_clusters))]
    if temporal:
        for _ in range(n_timestamps - 1):
            step = maps[-1].copy()
            for _ in range(drift):
                step[rng.integers(n_relations), rng.integers(n_clusters)] = \
                    rng.integers(n_clusters)
            maps.append(step)

    seen = set()
    attempts = 0
    while len(seen) < n_facts and attempts < 60 * n_facts:
        attempts += 1
        h = int(rng.integers(n_entities))
        r = int(rng.integers(n_relations))
        if temporal:
            tl = int(rng.integers(n_timestamps))
            tail = int(rng.choice(members[maps[tl][r, cluster[h]]]))
            seen.add((h, r, tail, tl))
        else:
            tail = int(rng.choice(members[maps[0][r, cluster[h]]]))
            seen.add((h, r, tail))
    facts = np.array(sorted(seen), dtype=np.int64)
    rng.shuffle(facts)
    n_eval = max(1, len(facts) * 15 // 100)
    valid, test, train = facts[:n_eval], facts[n_eval:2 * n_eval], facts[2 * n_eval:]
    return dataset_from_arrays(train, valid, test, n_entities, n_relations,
                               temporal, n_timestamps)


def write_kg_files(ds_dir: Path, splits: dict[str, list[tuple]]) -> Path:
    """Write raw label TSV files for the loader / CLI."""
    ds_dir.mkdir(parents=True, exist_ok=True)
    for name, facts in splits.items():
        with open(ds_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            for fact in facts:
                fh.write("\t".join(str(x) for x in fact) + "\n")
    return ds_dir


def dump_dataset_files(ds: Dataset, ds_dir: Path) -> Path:
    """Materialize an in-memory dataset as label TSV files."""
    ent = ds.entity_labels()
    rel = ds.relation_labels()
    ts = ds.timestamp_labels()
    splits = {}
    for name, arr in ds.splits().items():
        rows = []
        for row in arr:
            fact = [ent[row[0]], rel[row[1]], ent[row[2]]]
            if ds.temporal:
                fact.append(ts[row[3]])
            rows.append(tuple(fact))
        splits[name] = rows
    return write_kg_files(ds_dir, splits)


# -- finite-difference gradient harness -----------------------------------------

def total_loss(
    params: ModelParams,
    rows: np.ndarray,
    weights: np.ndarray,
    spec: RegSpec | None = None,
    chain_length: int | None = None,
) -> float:
    """Batch objective: weighted cross-entropy plus optional penalty and
    timestamp smoother, exactly as assembled in training."""
    temporal = params.kind.is_temporal
    times = rows[:, 3] if temporal else None
    cache = forward_queries(params, rows[:, 0], rows[:, 1], times)
    scores = all_scores(params, cache)
    losses, _ = _wce_batch(scores, rows[:, 2], weights)
    total = float(losses.sum())
    if spec is not None and spec.kind is not RegKind.NONE and spec.lam > 0:
        values, _ = penalty_batch(spec, params, rows[:, 0], rows[:, 1],
                                  rows[:, 2], times)
        total += spec.lam * float(values.sum())
    if spec is not None and spec.smoother is not SmootherKind.NONE:
        value, _ = timestamp_smoother_grad(spec.smoother, params.times,
                                           chain_length)
        total += spec.smoother_weight * value
    return total


def analytic_grads(
    params: ModelParams,
    rows: np.ndarray,
    weights: np.ndarray,
    spec: RegSpec | None = None,
    chain_length: int | None = None,
) -> dict[str, np.ndarray]:
    """Dense per-table gradients of :func:`total_loss`."""
    temporal = params.kind.is_temporal
    times = rows[:, 3] if temporal else None
    cache = forward_queries(params, rows[:, 0], rows[:, 1], times)
    scores = all_scores(params, cache)
    _, d_scores = _wce_batch(scores, rows[:, 2], weights)
    grads = backward(params, cache, d_scores)

    out = {"tail": grads.tail_dense.copy()}
    out["head"] = np.zeros_like(params.head)
    if grads.head is not None:
        np.add.at(out["head"], grads.head.ids, grads.head.grads)
    out["relations"] = np.zeros_like(params.relations)
    np.add.at(out["relations"], grads.relations.ids, grads.relations.grads)
    if params.times is not None:
        out["times"] = np.zeros_like(params.times)
        if grads.times is not None:
            np.add.at(out["times"], grads.times.ids, grads.times.grads)

    if spec is not None and spec.kind is not RegKind.NONE and spec.lam > 0:
        _, pen = penalty_batch(spec, params, rows[:, 0], rows[:, 1],
                               rows[:, 2], times)
        lam = spec.lam
        np.add.at(out["tail"], rows[:, 2], lam * pen.tail)
        target = out["head"] if params.kind is ModelKind.CP else out["tail"]
        np.add.at(target, rows[:, 0], lam * pen.head)
        np.add.at(out["relations"], rows[:, 1], lam * pen.rel)
        if pen.time is not None:
            np.add.at(out["times"], times, lam * pen.time)

    if spec is not None and spec.smoother is not SmootherKind.NONE:
        _, s_grad = timestamp_smoother_grad(spec.smoother, params.times,
                                            chain_length)
        out["times"] += spec.smoother_weight * s_grad

    if params.kind.shares_entity_table:
        # head contributions already live in the shared tail-table gradient
        out["tail"] += out.pop("head")
        out["entities"] = out.pop("tail")
    return out


def fd_check(
    params: ModelParams,
    rows: np.ndarray,
    weights: np.ndarray,
    spec: RegSpec | None = None,
    chain_length: int | None = None,
    h: float = 1e-5,
    rtol: float = 1e-4,
) -> float:
    """Compare analytic gradients against central differences over every
    parameter entry; returns the worst relative error."""
    analytic = analytic_grads(params, rows, weights, spec, chain_length)
    tables: dict[str, np.ndarray] = {"relations": params.relations}
    if params.kind.shares_entity_table:
        tables["entities"] = params.head
    else:
        tables["head"] = params.head
        tables["tail"] = params.tail
    if params.times is not None:
        tables["times"] = params.times

    worst = 0.0
    for name, table in tables.items():
        flat = table.reshape(-1)
        grad = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = total_loss(params, rows, weights, spec, chain_length)
            flat[idx] = orig - h
            down = total_loss(params, rows, weights, spec, chain_length)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            err = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), 1e-3)
            if err > worst:
                worst = err
            assert err <= rtol, (
                f"{name}[{idx}]: analytic={grad[idx]:.8g} fd={fd:.8g} "
                f"rel_err={err:.2e} (kind={params.kind.value}, "
                f"reg={spec.kind.value if spec else 'none'})"
            )
    return worst


def random_params(
    kind: ModelKind,
    rng: np.random.Generator,
    n_entities: int = 6,
    n_relations: int = 4,
    dim: int = 4,
    n_timestamps: int = 3,
) -> ModelParams:
    """Standard-normal-scale parameters (good conditioning for FD checks)."""
    return init_params(
        kind,
        n_entities=n_entities,
        n_relations=n_relations,
        dim=dim,
        n_timestamps=n_timestamps if kind.is_temporal else 0,
        rng=rng,
        scale=1.0,
        dtype=np.float64,
    )


def random_batch(
    rng: np.random.Generator,
    params: ModelParams,
    batch: int = 3,
) -> tuple[np.ndarray, np.ndarray]:
    width = 4 if params.kind.is_temporal else 3
    rows = np.empty((batch, width), dtype=np.int64)
    rows[:, 0] = rng.integers(params.n_entities, size=batch)
    rows[:, 1] = rng.integers(params.n_relations, size=batch)
    rows[:, 2] = rng.integers(params.n_entities, size=batch)
    if width == 4:
        rows[:, 3] = rng.integers(params.n_timestamps, size=batch)
    weights = rng.uniform(0.5, 1.0, size=batch)
    return rows, weights


# -- independent ranking oracle --------------------------------------------------

def oracle_rank(scores: np.ndarray, target: int, filtered: set[int]) -> float:
    """Sort all unfiltered candidates by score and average the positions of
    the block tied with the target."""
    entries = [(float(s), k) for k, s in enumerate(scores)
               if k == target or k not in filtered]
    entries.sort(key=lambda e: -e[0])
    target_score = float(scores[target])
    positions = [i + 1 for i, (s, _) in enumerate(entries) if s == target_score]
    return sum(positions) / len(positions)


def oracle_evaluate(params: ModelParams, split: np.ndarray, filter_sets) -> dict:
    """Brute-force filtered metrics; `filter_sets` maps query keys to the
    known-true tails."""
    from kgedura.models import score_all_candidates

    ranks = []
    temporal = split.shape[1] == 4
    for row in split:
        key = (int(row[0]), int(row[1])) + ((int(row[3]),) if temporal else ())
        target = int(row[2])
        scores = score_all_candidates(params, int(row[0]), int(row[1]),
                                      int(row[3]) if temporal else None)
        filtered = set(int(x) for x in filter_sets.get(key, ())) - {target}
        ranks.append(oracle_rank(scores, target, filtered))
    ranks = np.asarray(ranks)
    return {
        "mrr": float(np.mean(1.0 / ranks)),
        "hits1": float(np.mean(ranks <= 1)),
        "hits3": float(np.mean(ranks <= 3)),
        "hits10": float(np.mean(ranks <= 10)),
    }
