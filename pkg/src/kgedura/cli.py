"""Command-line interface: train, eval, sparsify, verify, export, stats.

Flags are the primary interface; ``--config`` points at a flat key=value
file whose entries serve as defaults that explicit flags override.  The
environment variable ``KGE_DATA_DIR`` supplies a default ``--data``
directory.  All outputs land under ``--out``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, read_vocab_sidecar
from .data import (Dataset, add_reciprocals, build_filter_index,
                   classify_relations, load_dataset, vocab_hashes, write_vocab)
from .errors import (CheckpointError, ConfigError, DatasetError, KgeError,
                     TrainingDiverged)
from .evaluation import evaluate_split, threshold_and_export
from .models import ModelKind, ModelParams
from .regularizers import RegKind, RegSpec, SmootherKind
from .theory import run_verification
from .training import TrainConfig, fit

_CONFIG_TYPES: dict[str, type] = {
    "model": str,
    "dim": int,
    "batch": int,
    "lr": float,
    "epochs": int,
    "seed": int,
    "valid_every": int,
    "w0": float,
    "reg": str,
    "lam": float,
    "lam1": float,
    "lam2": float,
    "lam3": float,
    "lam4": float,
    "smoother": str,
    "smoother_weight": float,
    "conjugate_tail_projection": bool,
    "precision": str,
    "init_scale": float,
    "adagrad_eps": float,
    "threads": int,
}
_CONFIG_KEYS = list(_CONFIG_TYPES)


def config_to_text(cfg: TrainConfig) -> str:
    """Serialize a training configuration as a flat key=value file."""
    values = {
        "model": cfg.model.value,
        "dim": cfg.dim,
        "batch": cfg.batch_size,
        "lr": cfg.lr,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "valid_every": cfg.valid_every,
        "w0": cfg.w0,
        "reg": cfg.reg.kind.value,
        "lam": cfg.reg.lam,
        "lam1": cfg.reg.lam1,
        "lam2": cfg.reg.lam2,
        "lam3": cfg.reg.lam3,
        "lam4": cfg.reg.lam4,
        "smoother": cfg.reg.smoother.value,
        "smoother_weight": cfg.reg.smoother_weight,
        "conjugate_tail_projection": str(cfg.reg.conjugate_tail_projection).lower(),
        "precision": cfg.precision,
        "init_scale": cfg.init_scale,
        "adagrad_eps": cfg.adagrad_eps,
        "threads": cfg.threads,
    }
    return "".join(f"{k}={values[k]}\n" for k in _CONFIG_KEYS)


def _parse_bool(value: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


def parse_kv_file(path: str | Path) -> dict:
    """Read a flat key=value config file into typed values."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        caster = _CONFIG_TYPES[key]
        try:
            out[key] = _parse_bool(value) if caster is bool else caster(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    return out


def config_from_namespace(ns: argparse.Namespace) -> TrainConfig:
    try:
        reg = RegSpec(
            kind=RegKind(ns.reg),
            lam=ns.lam,
            lam1=ns.lam1,
            lam2=ns.lam2,
            lam3=ns.lam3,
            lam4=ns.lam4,
            smoother=SmootherKind(ns.smoother),
            smoother_weight=ns.smoother_weight,
            conjugate_tail_projection=ns.conjugate_tail_projection,
        )
        cfg = TrainConfig(
            model=ModelKind(ns.model),
            dim=ns.dim,
            batch_size=ns.batch,
            lr=ns.lr,
            epochs=ns.epochs,
            seed=ns.seed,
            valid_every=ns.valid_every,
            w0=ns.w0,
            reg=reg,
            precision=ns.precision,
            init_scale=ns.init_scale,
            adagrad_eps=ns.adagrad_eps,
            threads=ns.threads,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="key=value file supplying defaults that flags override")
    p.add_argument("--model", choices=[k.value for k in ModelKind], default="cp")
    p.add_argument("--dim", type=int, default=200, help="embedding dimension")
    p.add_argument("--batch", type=int, default=100, help="batch size")
    p.add_argument("--lr", type=float, default=0.1, help="Adagrad learning rate")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--valid-every", dest="valid_every", type=int, default=5,
                   help="validate (and maybe checkpoint) every N epochs")
    p.add_argument("--w0", type=float, default=0.0,
                   help="frequency-weighting strength for the loss")
    p.add_argument("--reg", choices=[k.value for k in RegKind], default="none")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                   help="overall penalty coefficient")
    p.add_argument("--lambda1", dest="lam1", type=float, default=1.0)
    p.add_argument("--lambda2", dest="lam2", type=float, default=1.0)
    p.add_argument("--lambda3", dest="lam3", type=float, default=1.0)
    p.add_argument("--lambda4", dest="lam4", type=float, default=1.0)
    p.add_argument("--smoother", choices=[k.value for k in SmootherKind],
                   default="none", help="timestamp smoothness penalty")
    p.add_argument("--smoother-weight", dest="smoother_weight", type=float,
                   default=1.0)
    p.add_argument("--conjugate-tail-projection", dest="conjugate_tail_projection",
                   action="store_true", default=False,
                   help="conjugate the relation in the tail-side projection "
                        "of the L1 penalty")
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--init-scale", dest="init_scale", type=float, default=1e-3)
    p.add_argument("--adagrad-eps", dest="adagrad_eps", type=float, default=1e-10)
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS threads; 1 guarantees bitwise determinism")


def _data_flag(p: argparse.ArgumentParser, required: bool = True) -> None:
    default = os.environ.get("KGE_DATA_DIR")
    p.add_argument("--data", default=default, required=required and default is None,
                   help="directory holding train.txt / valid.txt / test.txt "
                        "(default: $KGE_DATA_DIR)")


def build_parser() -> tuple[argparse.ArgumentParser, argparse.ArgumentParser]:
    """The full parser plus a handle on the train subparser (for config-file
    defaults)."""
    parser = argparse.ArgumentParser(
        prog="kgedura",
        description="Train and evaluate semantic-matching knowledge-graph "
                    "embeddings with duality-induced regularization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    train_parser = p = sub.add_parser(
        "train", help="train a model and keep the best checkpoint by "
        "validation MRR", formatter_class=fmt)
    _data_flag(p)
    _add_train_flags(p)
    p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("eval", help="filtered ranking metrics for a checkpoint",
                       formatter_class=fmt)
    _data_flag(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["test", "valid", "train"], default="test")
    p.add_argument("--by-relation-type", dest="by_type", action="store_true",
                   default=False, help="break metrics down by relation "
                                       "cardinality class")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("sparsify", help="threshold entity embeddings, "
                       "re-evaluate, and export CSR files", formatter_class=fmt)
    _data_flag(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-sparsity", dest="target_sparsity", type=float,
                   required=True, help="fraction of entity entries to zero")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("verify", help="run the nuclear-norm verification suite",
                       formatter_class=fmt)
    p.add_argument("--seeds", type=int, default=20)

    p = sub.add_parser("export", help="dump raw float32 embeddings and "
                       "vocabularies", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default="out", help="output directory")
    _data_flag(p, required=False)

    p = sub.add_parser("stats", help="print dataset statistics",
                       formatter_class=fmt)
    _data_flag(p)
    p.add_argument("--temporal", action="store_true", default=False,
                   help="parse the fourth (timestamp) column")
    return parser, train_parser


def _load_data(data_dir: str, temporal: bool) -> Dataset:
    root = Path(data_dir)
    for name in ("train.txt", "valid.txt", "test.txt"):
        if not (root / name).exists():
            raise DatasetError(f"missing {root / name}")
    return load_dataset(root / "train.txt", root / "valid.txt",
                        root / "test.txt", temporal=temporal)


def _check_vocab(params_path: str, ds: Dataset) -> None:
    recorded = read_vocab_sidecar(params_path)
    if not recorded:
        return
    current = vocab_hashes(ds)
    for name, digest in recorded.items():
        if current.get(name) != digest:
            raise CheckpointError(
                f"vocabulary mismatch for {name!r}: the checkpoint was "
                "trained on a different dataset"
            )


def _cmd_train(ns: argparse.Namespace) -> int:
    cfg = config_from_namespace(ns)
    ds = add_reciprocals(_load_data(ns.data, cfg.model.is_temporal))
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    print(f"seed={cfg.seed}")
    result = fit(ds, cfg, out_dir=out, log=print)
    print(f"best epoch {result.best_epoch}: "
          f"valid mrr={result.best_valid.mrr:.6f} "
          f"h@1={result.best_valid.hits1:.6f} "
          f"h@3={result.best_valid.hits3:.6f} "
          f"h@10={result.best_valid.hits10:.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def _eval_context(ns: argparse.Namespace) -> tuple[ModelParams, Dataset]:
    params = load_checkpoint(ns.checkpoint)
    ds = add_reciprocals(_load_data(ns.data, params.kind.is_temporal))
    _check_vocab(ns.checkpoint, ds)
    return params, ds


def _cmd_eval(ns: argparse.Namespace) -> int:
    from threadpoolctl import threadpool_limits

    params, ds = _eval_context(ns)
    split = ds.splits()[ns.split]
    fidx = build_filter_index(ds)
    types = None
    if ns.by_type:
        types = classify_relations(ds.train, ds.n_raw_relations)
    with threadpool_limits(limits=ns.threads):
        report = evaluate_split(params, split, fidx, relation_types=types)
    print(report.format_table())
    for line in report.keyvalue_lines():
        print(line)
    return 0


def _cmd_sparsify(ns: argparse.Namespace) -> int:
    from threadpoolctl import threadpool_limits

    params, ds = _eval_context(ns)
    fidx = build_filter_index(ds)
    out = Path(ns.out)
    with threadpool_limits(limits=ns.threads):
        report = threshold_and_export(params, ns.target_sparsity, ds.test,
                                      fidx, out)
    lines = report.keyvalue_lines()
    (out / "sparsity_report.txt").write_text("\n".join(lines) + "\n",
                                             encoding="utf-8")
    for line in lines:
        print(line)
    for f in report.files:
        print(f"wrote {f}")
    return 0


def _cmd_verify(ns: argparse.Namespace) -> int:
    results = run_verification(seeds=ns.seeds)
    for res in results:
        print(res.format_line())
    return 0 if all(r.passed for r in results) else 1


def _cmd_export(ns: argparse.Namespace) -> int:
    params = load_checkpoint(ns.checkpoint)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    tables = {"relations.f32": params.relations}
    if params.kind.shares_entity_table:
        tables["entities.f32"] = params.head
    else:
        tables["entities_head.f32"] = params.head
        tables["entities_tail.f32"] = params.tail
    if params.times is not None:
        tables["timestamps.f32"] = params.times
    for name, table in tables.items():
        path = out / name
        np.ascontiguousarray(table, dtype="<f4").tofile(path)
        print(f"wrote {path} shape={table.shape}")
    if ns.data:
        ds = add_reciprocals(_load_data(ns.data, params.kind.is_temporal))
        _check_vocab(ns.checkpoint, ds)
        for path in write_vocab(ds, out):
            print(f"wrote {path}")
    return 0


def _cmd_stats(ns: argparse.Namespace) -> int:
    ds = _load_data(ns.data, ns.temporal)
    print(f"entities    {ds.n_entities:,}")
    print(f"relations   {ds.n_raw_relations:,}")
    if ds.temporal:
        print(f"timestamps  {ds.n_timestamps:,}")
    for name, split in ds.splits().items():
        print(f"{name:<12}{len(split):,}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sparsify": _cmd_sparsify,
    "verify": _cmd_verify,
    "export": _cmd_export,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, train_parser = build_parser()

    # A config file supplies defaults; explicit flags take precedence.
    if argv[:1] == ["train"]:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config:
            try:
                train_parser.set_defaults(**parse_kv_file(known.config))
            except (OSError, ConfigError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 2

    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return _COMMANDS[ns.command](ns)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (KgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
