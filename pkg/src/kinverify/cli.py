"""Command-line entry point wiring the library into reproducible runs.

Exit codes: 0 success, 1 validation or data failure, 2 usage error. Every
subcommand that writes files also writes a manifest.json with the resolved
config, the seed and a checksum per artifact.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .comparator import PoolingMode, attention_forward, score_unknown, verify
from .config import ConfigError, RunConfig, parse_config, write_manifest
from .data import (
    DataFormatError,
    PairLabel,
    TriSample,
    concat_features,
    load_embeddings,
    load_pairs,
    load_tri,
    save_embeddings,
    save_pairs,
    save_tri,
)
from .evaluation import (
    Direction,
    Objective,
    Scorer,
    accuracy_report,
    ablation_run,
    calibrate_per_relation,
    calibrate_threshold,
    default_ablation_grid,
    histogram,
    save_ablation_csv,
    score_pairs,
    tri_score,
)
from .model_io import ModelFormatError, load_model, save_model
from .relations import KinshipRelation
from .synth import generate_world, save_pedigree
from .training import gradcheck, train, train_attention

GRADCHECK_BOUND = 1e-6


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON run config")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")


def _run_config(args: argparse.Namespace, extra: dict | None = None) -> RunConfig:
    overrides: dict = {"seed": args.seed}
    overrides.update(extra or {})
    return parse_config(getattr(args, "config", None), overrides)


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = _run_config(
        args,
        {
            "synth.dim": args.dim,
            "synth.identity_dims": args.identity_dims,
            "synth.n_train_families": args.train_families,
            "synth.n_val_families": args.val_families,
            "synth.n_test_families": args.test_families,
        },
    )
    world = generate_world(cfg.synth_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = [out / "embeddings.csv", out / "pedigree.csv"]
    save_embeddings(world.store, out / "embeddings.csv")
    save_pedigree(world.pedigree, out / "pedigree.csv")
    save_pairs(world.kin_pairs["train"], out / "pairs_train.csv")
    artifacts.append(out / "pairs_train.csv")
    for split in ("val", "test"):
        save_pairs(world.eval_pairs[split], out / f"pairs_{split}.csv")
        artifacts.append(out / f"pairs_{split}.csv")
    for split in ("train", "val", "test"):
        save_tri(world.tris[split], out / f"tri_{split}.csv")
        artifacts.append(out / f"tri_{split}.csv")
    write_manifest(out, "synth", cfg, artifacts)
    print(f"world written to {out} ({len(world.store)} persons, dim {world.store.dim})")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _run_config(
        args,
        {
            "model.hidden": args.hidden,
            "model.activation": args.activation,
            "model.dropout": args.dropout,
            "model.sharing": args.sharing,
            "train.epochs": args.epochs,
            "train.batch_size": args.batch_size,
        },
    )
    data = Path(args.data)
    store = load_embeddings(data / "embeddings.csv")
    kin = load_pairs(data / "pairs_train.csv", store)
    val = load_pairs(data / "pairs_val.csv", store)
    comp_cfg = cfg.comparator_config(input_dim=2 * store.dim)
    params, history = train(store, kin, val, comp_cfg, cfg.train_config())
    if args.attention:
        params = train_attention(params, store, kin, cfg.train_config())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.kinc"
    save_model(params, model_path)
    history_path = out / "history.csv"
    with history_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,lr,train_loss,val_macro_acc\n")
        for h in history:
            fh.write(f"{h.epoch},{repr(h.lr)},{repr(h.train_loss)},{repr(h.val_macro_acc)}\n")
    write_manifest(out, "train", cfg, [model_path, history_path])
    for h in history:
        print(f"epoch {h.epoch}: lr={h.lr} loss={h.train_loss:.4f} val_macro={h.val_macro_acc:.4f}")
    print(f"model written to {model_path}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _run_config(args, {"eval.objective": args.objective})
    params = load_model(args.model)
    store = load_embeddings(args.embeddings)
    pairs = load_pairs(args.pairs, store)
    scored = score_pairs(params, store, pairs)
    objective = Objective(cfg.eval.objective)
    if args.per_relation:
        # extension mode: one threshold per relation, beyond the published
        # single-threshold protocol; never stored in the model file
        threshold = calibrate_per_relation(scored)
    elif args.calibrate:
        threshold, best = calibrate_threshold(scored, objective=objective)
        params.threshold = threshold
        save_model(params, args.model)
        print(f"calibrated threshold {threshold:.6f} ({objective.value} accuracy {best:.4f})")
    elif args.threshold is not None:
        threshold = args.threshold
    elif params.threshold is not None:
        threshold = params.threshold
    else:
        raise ValueError("model has no stored threshold; pass --calibrate or --threshold")
    report = accuracy_report(scored, threshold, Direction.HIGHER_IS_KIN, include_auc=args.auc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.csv"
    report.save_csv(report_path)
    write_manifest(out, "eval", cfg, [report_path])
    for row in report.rows:
        extra = f" auc={row.auc:.4f}" if row.auc is not None else ""
        print(f"{row.relation:5s} accuracy={row.accuracy:.4f} n={row.count}{extra}")
    if report.missing:
        print(f"missing relations (excluded from macro): {','.join(report.missing)}")
    if isinstance(threshold, dict):
        print(f"macro accuracy {report.macro_accuracy:.4f} with per-relation thresholds")
    else:
        print(f"macro accuracy {report.macro_accuracy:.4f} at threshold {threshold:.6f}")
    return 0


def _cmd_verify(args: argparse.Namespace) -> int:
    params = load_model(args.model)
    store = load_embeddings(args.embeddings)
    relation = KinshipRelation.from_code(args.relation)
    score, decision = verify(
        params,
        store.embedding(args.id1),
        store.embedding(args.id2),
        relation,
        args.threshold,
    )
    used = args.threshold if args.threshold is not None else params.threshold
    print(f"score={score:.6f} threshold={used:.6f} decision={decision.value}")
    return 0


def _cmd_tri_verify(args: argparse.Namespace) -> int:
    params = load_model(args.model)
    store = load_embeddings(args.embeddings)
    sample_gender = store.person(args.child).gender
    sample = TriSample(args.father, args.mother, args.child, sample_gender, PairLabel.KIN)
    z_fc, z_mc, fused = tri_score(params, store, sample)
    threshold = args.threshold if args.threshold is not None else params.threshold
    if threshold is None:
        raise ValueError("model has no stored threshold; pass --threshold")
    decision = "kin" if fused >= threshold else "nonkin"
    print(f"z_father_child={z_fc:.6f} z_mother_child={z_mc:.6f} fused={fused:.6f} decision={decision}")
    return 0


def _cmd_histogram(args: argparse.Namespace) -> int:
    cfg = _run_config(args, {"eval.bins": args.bins})
    store = load_embeddings(args.embeddings)
    pairs = load_pairs(args.pairs, store)
    scorer = Scorer(args.scorer)
    params = load_model(args.model) if args.model else None
    if scorer is Scorer.COMPARATOR and params is None:
        raise ValueError("comparator histograms need --model")
    scored = score_pairs(params, store, pairs, scorer)
    relations = None
    if args.relations:
        relations = {KinshipRelation.from_code(c) for c in args.relations.split(",")}
    default_range = (0.0, 2.0) if scorer is Scorer.COSINE else (0.0, 1.0)
    value_range = default_range
    if args.range:
        lo, hi = args.range.split(",")
        value_range = (float(lo), float(hi))
    table = histogram(scored, cfg.eval.bins, value_range, relations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save_csv(out)
    write_manifest(out.parent, "histogram", cfg, [out], name=f"{out.name}.manifest.json")
    print(f"histogram written to {out} (overlap {table.overlap():.4f})")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _run_config(args, {"train.epochs": args.epochs})
    data = Path(args.data)
    store = load_embeddings(data / "embeddings.csv")
    kin = load_pairs(data / "pairs_train.csv", store)
    val = load_pairs(data / "pairs_val.csv", store)
    results = ablation_run(
        store,
        kin,
        val,
        input_dim=2 * store.dim,
        train_config=cfg.train_config(),
        grid=default_ablation_grid(),
        objective=Objective(cfg.eval.objective),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ablation_csv(results, out)
    write_manifest(out.parent, "ablate", cfg, [out], name=f"{out.name}.manifest.json")
    for r in results:
        print(
            f"{r.cell.activation:6s} dropout={r.cell.dropout_p:.1f} "
            f"hidden={r.cell.hidden:4d} accuracy={r.accuracy:.4f}"
        )
    print(f"ablation table written to {out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    err = gradcheck(seed=args.seed if args.seed is not None else 0)
    print(f"max relative gradient error: {err:.3e} (bound {GRADCHECK_BOUND:.0e})")
    return 0 if err < GRADCHECK_BOUND else 1


def _cmd_predict_relation(args: argparse.Namespace) -> int:
    params = load_model(args.model)
    if not params.has_attention:
        raise ValueError("model has no attention head; train with --attention")
    store = load_embeddings(args.embeddings)
    features = concat_features(store.embedding(args.id1), store.embedding(args.id2))
    probs = attention_forward(params, features)
    order = np.argsort(probs)[::-1]
    codes = params.config.relations
    top = ", ".join(f"{codes[i]}={probs[i]:.4f}" for i in order[:3])
    print(f"predicted relation: {codes[order[0]]} (top candidates: {top})")
    if args.pooling:
        z = score_unknown(params, features, PoolingMode(args.pooling))
        print(f"unknown-relation kin score ({args.pooling}): {z:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinverify",
        description="Kinship verification with cascaded local-expert comparators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic embedding world")
    _add_config_flags(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--identity-dims", type=int, default=None)
    p.add_argument("--train-families", type=int, default=None)
    p.add_argument("--val-families", type=int, default=None)
    p.add_argument("--test-families", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a comparator on a world directory")
    _add_config_flags(p)
    p.add_argument("--data", required=True, type=Path, help="directory from `synth`")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--activation", choices=["lrelu", "relu", "prelu", "tanh"], default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--sharing", choices=["per-expert", "shared-trunk", "entirely-local"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--attention", action="store_true", help="also train the relation head")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="report per-relation accuracy on a pairs file")
    _add_config_flags(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--pairs", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--calibrate", action="store_true", help="calibrate and store the threshold")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--per-relation", action="store_true",
                   help="extension: calibrate one threshold per relation (not stored)")
    p.add_argument("--objective", choices=["macro", "micro"], default=None)
    p.add_argument("--auc", action="store_true", help="include per-relation AUC")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="score one pair under a stated relation")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--id1", required=True)
    p.add_argument("--id2", required=True)
    p.add_argument("--relation", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("tri-verify", help="score a father-mother-child triple")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--father", required=True)
    p.add_argument("--mother", required=True)
    p.add_argument("--child", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=_cmd_tri_verify)

    p = sub.add_parser("histogram", help="kin/nonkin score histogram as CSV")
    _add_config_flags(p)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--pairs", required=True, type=Path)
    p.add_argument("--scorer", choices=["comparator", "cosine"], default="comparator")
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--relations", default=None, help="comma-separated relation codes")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--range", default=None, help="lo,hi (defaults: 0,1 comparator; 0,2 cosine)")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_histogram)

    p = sub.add_parser("ablate", help="run the full parameter-study grid")
    _add_config_flags(p)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="verify backprop against finite differences")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("predict-relation", help="predict the relation of a pair")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--embeddings", required=True, type=Path)
    p.add_argument("--id1", required=True)
    p.add_argument("--id2", required=True)
    p.add_argument("--pooling", choices=["soft", "hard", "mean", "max"], default=None)
    p.set_defaults(func=_cmd_predict_relation)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, ModelFormatError, ValueError, KeyError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
