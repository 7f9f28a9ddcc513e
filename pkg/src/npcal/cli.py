"""Command line entry point: ``npcal <subcommand> ...``."""

import argparse
import csv
import json
import sys

import numpy as np

from .classifier import TrainConfig, predict, train_classifier
from .data import (
    SyntheticSpec,
    generate_gaussian_mixture,
    load_dataset,
    load_predictions,
    save_dataset,
    save_predictions,
    train_test_split,
)
from .errors import StageError
from .harness import (
    CONFIG_KEYS,
    EvalReport,
    accuracy,
    build_config,
    confusion,
    load_config,
    net_gain,
    parse_asn_map,
    run_pipeline,
    venn_counts,
    write_report,
)
from .nn import load_mlp, save_mlp
from .noise import NoiseOutcome, NoiseSpec, inject, true_transition
from .npc import NpcConfig, calibrate, calibration_matrices, config_to_dict, fit_calibrator, load_npc, mix, save_npc
from .prior import PriorConfig
from .transition import aux_matrices, estimate_transition, train_aux


def _early_stop(text):
    if not text:
        return None
    frac, patience = text.split(":")
    return float(frac), int(patience)


def _train_config(args):
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        smoothing=getattr(args, "smoothing", 0.0),
        early_stop=_early_stop(getattr(args, "early_stop", None)),
    )


def _add_train_flags(p, epochs=100):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# --------------------------------------------------------------------------


def cmd_gen_data(args):
    spec = SyntheticSpec(args.classes, args.n, args.dim, args.spread, args.seed)
    ds = generate_gaussian_mixture(spec)
    if args.test_out:
        train, test = train_test_split(ds, args.test_fraction, args.seed)
        save_dataset(train, args.out)
        save_dataset(test, args.test_out)
    else:
        save_dataset(ds, args.out)


def cmd_inject_noise(args):
    ds = load_dataset(args.data)
    preds = load_predictions(args.preds) if args.preds else None
    spec = NoiseSpec(args.kind.upper(), args.ratio, args.seed, parse_asn_map(args.asn_map, ds.n_classes))
    outcome = inject(ds, spec, preds)
    save_dataset(ds.with_noisy_labels(outcome.noisy_labels), args.out)
    if args.rows_out and outcome.per_instance_rows is not None:
        from .data import PredictionSet

        save_predictions(PredictionSet(outcome.per_instance_rows), args.rows_out)
    flipped = int(np.sum(outcome.noisy_labels != ds.true_labels))
    print(f"flipped {flipped} of {ds.n} labels")


def cmd_train(args):
    ds = load_dataset(args.data)
    if args.clean:
        ds = ds.with_noisy_labels(ds.true_labels)
    model = train_classifier(ds, _train_config(args))
    save_mlp(model, args.out)


def cmd_predict(args):
    model = load_mlp(args.model)
    ds = load_dataset(args.data)
    save_predictions(predict(model, ds.features), args.out)


def _npc_config(args):
    prior = PriorConfig(
        k=args.k,
        rho=args.rho,
        delta=args.delta,
        variant=args.variant.upper(),
        m=args.m,
        confidence_threshold=args.threshold,
        top_fraction=args.top_fraction,
        feature_space=args.space,
    )
    return NpcConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        mc_samples=args.mc_samples,
        prior=prior,
    )


def cmd_calibrate(args):
    ds = load_dataset(args.data)
    preds = load_predictions(args.preds)
    if args.npc:
        model = load_npc(args.npc)
    else:
        cfg = _npc_config(args)
        model, _ = fit_calibrator(ds.features, preds, cfg)
        if args.save_model:
            save_npc(model, args.save_model, config_to_dict(cfg))
    target_ds = load_dataset(args.target_data) if args.target_data else ds
    target_preds = load_predictions(args.target_preds) if args.target_preds else preds
    save_predictions(calibrate(model, target_ds.features, target_preds), args.out)


def cmd_estimate_t(args):
    ds = load_dataset(args.data)
    if ds.true_labels is None or ds.noisy_labels is None:
        raise SystemExit("estimate-t needs a dataset with both true and noisy labels")
    preds = load_predictions(args.preds)
    model = load_npc(args.npc)
    c = ds.n_classes
    h = calibration_matrices(model, ds.features)
    p_y = mix(h, preds.probs)
    aux = train_aux(ds.features, ds.noisy_labels, preds, _train_config(args))
    rows = load_predictions(args.rows).probs if args.rows else None
    t_true = true_transition(NoiseOutcome(ds.noisy_labels, rows), ds.true_labels, c)
    est = estimate_transition(
        h, p_y, preds.probs.astype(np.float64), aux_matrices(aux, ds.features, c), ds.true_labels, t_true
    )
    _write_json(
        {
            "t_estimate": est.aggregate.entries.tolist(),
            "t_true": t_true.entries.tolist(),
            "t_mse": est.mse,
            "t_exclusion_rate": est.exclusion_rate,
        },
        args.out,
    )
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(est.aggregate.entries.tolist())


def disagreements(labels, calibrated, top):
    """Samples whose annotation differs from the calibrated prediction, most confident first."""
    pred = calibrated.labels
    conf = calibrated.probs.max(axis=1)
    idx = np.flatnonzero(pred != labels)
    idx = idx[np.argsort(-conf[idx], kind="stable")][:top]
    return [
        {"index": int(i), "annotation": int(labels[i]), "prediction": int(pred[i]), "confidence": float(conf[i])}
        for i in idx
    ]


def cmd_eval(args):
    ds = load_dataset(args.data)
    if ds.true_labels is None:
        raise SystemExit("eval needs true labels")
    before = load_predictions(args.preds)
    after = load_predictions(args.calibrated)
    c = ds.n_classes
    noisy = ds.noisy_labels if ds.noisy_labels is not None else ds.true_labels
    report = EvalReport(
        accuracy_before=accuracy(before.labels, ds.true_labels),
        accuracy_after=accuracy(after.labels, ds.true_labels),
        confusion_before=confusion(before.labels, ds.true_labels, c).tolist(),
        confusion_after=confusion(after.labels, ds.true_labels, c).tolist(),
        venn_counts=venn_counts(ds.true_labels, noisy, before.labels, after.labels),
        n_test=ds.n,
    )
    out = report.to_dict(include_timings=False)
    out["net_gain"] = net_gain(report.venn_counts)
    if args.disagreements:
        annotation = ds.noisy_labels if ds.noisy_labels is not None else ds.true_labels
        out["disagreements"] = disagreements(annotation, after, args.disagreements)
    _write_json(out, args.out)


def cmd_pipeline(args):
    overrides = {key: getattr(args, key) for key in CONFIG_KEYS if getattr(args, key, None) is not None}
    overrides["seed"] = str(args.seed)
    cfg = load_config(args.config, overrides) if args.config else build_config(overrides)
    try:
        report = run_pipeline(cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_report(report, args.report, args.timings)
    print(
        f"accuracy before {report.accuracy_before:.4f} after {report.accuracy_after:.4f} "
        f"net gain {report.net_gain}"
    )
    return 0


# --------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="npcal", description="Noisy prediction calibration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian-mixture dataset (NPCD)")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out", help="also split off a test set and write it here")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("inject-noise", help="add noisy labels to an NPCD dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True, choices=["SN", "ASN", "IDN", "SRIDN", "sn", "asn", "idn", "sridn"])
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--asn-map", help="preset (mnist, fmnist, cifar10) or src:dst,...")
    p.add_argument("--preds", help="clean-classifier predictions (SRIDN)")
    p.add_argument("--out", required=True)
    p.add_argument("--rows-out", help="write p(noisy | y, x) rows as NPCP")
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("train", help="train the baseline classifier (NPCM)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--early-stop", help="VAL_FRACTION:PATIENCE")
    p.add_argument("--clean", action="store_true", help="train on true labels")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write classifier predictions (NPCP)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("calibrate", help="fit NPC and write calibrated predictions")
    p.add_argument("--data", required=True, help="training features (NPCD)")
    p.add_argument("--preds", required=True, help="classifier predictions on --data")
    p.add_argument("--out", required=True)
    p.add_argument("--npc", help="use a saved NPCN model instead of training")
    p.add_argument("--save-model")
    p.add_argument("--target-data", help="calibrate these features instead of --data")
    p.add_argument("--target-preds")
    _add_train_flags(p, epochs=NpcConfig.epochs)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--k", type=int, default=PriorConfig.k)
    p.add_argument("--rho", type=float, default=PriorConfig.rho)
    p.add_argument("--delta", type=float, default=PriorConfig.delta)
    p.add_argument("--variant", default="TOP1")
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--threshold", type=float)
    p.add_argument("--top-fraction", type=float, default=PriorConfig.top_fraction)
    p.add_argument("--space", default="auto", choices=["auto", "raw", "embedding"])
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("estimate-t", help="recover the noise transition matrix")
    p.add_argument("--data", required=True, help="NPCD with true and noisy labels")
    p.add_argument("--preds", required=True)
    p.add_argument("--npc", required=True)
    p.add_argument("--rows", help="ground-truth per-instance rows (NPCP); else label counts")
    p.add_argument("--out", help="JSON output (default stdout)")
    p.add_argument("--csv")
    _add_train_flags(p)
    p.set_defaults(func=cmd_estimate_t)

    p = sub.add_parser("eval", help="accuracy, confusion and failure regions")
    p.add_argument("--data", required=True)
    p.add_argument("--preds", required=True)
    p.add_argument("--calibrated", required=True)
    p.add_argument("--out", help="JSON output (default stdout)")
    p.add_argument("--disagreements", type=int, default=0, metavar="N")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run the full experiment")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="key = value file")
    p.add_argument("--report", required=True)
    p.add_argument("--timings", help="write per-stage wall times here")
    for key in CONFIG_KEYS:
        if key != "seed":
            p.add_argument("--" + key.replace("_", "-"), dest=key)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error in {args.command}: {exc}", file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
