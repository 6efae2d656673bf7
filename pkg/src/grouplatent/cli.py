"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or format error,
3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import decode_batch, encode_batch, init_autoencoder, load_model, save_model
from .contrastive import train_autoencoder
from .dataset import (
    DemographicSchema,
    GroupSelector,
    apply_standardizer,
    fit_standardizer,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_toy_dataset,
)
from .errors import FormatError, NumericError, ValidationError
from .evaluation import (
    classify_batch,
    confusion_from_predictions,
    histogram_intersection,
    ll_separation,
    pca_project,
    score_distributions,
    train_softmax_classifier,
    write_projection_csv,
)
from .gmm import EmConfig, em_fit, load_gmm, save_gmm, score_samples
from .pipeline import (
    DEFAULT_CONFIG,
    STAGES,
    PipelineConfig,
    StageError,
    emit_generator_handoff,
    run_full_pipeline,
    run_sample_group,
    sampled_dataset,
)
from .svg import histogram_svg, scatter_svg

log = logging.getLogger("grouplatent")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, "message": record.getMessage()})


def _setup_logging(as_json, verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if as_json else logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("grouplatent")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def _emit(args, obj):
    """Print a command result, as JSON when ``--json`` is set."""
    if args.json:
        print(json.dumps(obj, sort_keys=True))
    else:
        for k, v in obj.items():
            print(f"{k}: {v}")


def _config_section(args, key):
    raw = PipelineConfig.from_file(args.config).raw if args.config else DEFAULT_CONFIG
    return dict(raw[key] or {})


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_synth_data(args):
    if args.config:
        data = PipelineConfig.from_file(args.config).raw["data"]
    else:
        data = dict(DEFAULT_CONFIG["data"])
    for key in ("n_per_group", "dim", "sem_dim", "separation"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    schema = DemographicSchema.from_json(json.loads(Path(args.schema).read_text()) if args.schema else data["schema"])
    ds, truth = synth_toy_dataset(schema, int(data["n_per_group"]), int(data["sem_dim"]), int(data["dim"]),
                                  float(data["separation"]), args.seed)
    save_dataset(ds, args.out)
    _emit(args, {"records": len(ds), "dim": ds.dim, "out": str(args.out)})


def cmd_split(args):
    ds = load_dataset(args.data)
    train, test = split_dataset(ds, args.test_fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.latd")
    save_dataset(test, out / "test.latd")
    _emit(args, {"train": len(train), "test": len(test), "out": str(out)})


def cmd_train_ae(args):
    from .autoencoder import AutoencoderConfig
    from .contrastive import ContrastiveConfig

    ds = load_dataset(args.data)
    ae = _config_section(args, "autoencoder")
    ae["seed"] = args.seed
    if ae.get("encoder_dims") and ae["encoder_dims"][0] != ds.dim:
        raise ValidationError(f"encoder input width {ae['encoder_dims'][0]} does not match dataset dim {ds.dim}")
    model = init_autoencoder(AutoencoderConfig.from_json(ae))
    if not args.no_standardize:
        model.standardizer = fit_standardizer(ds)
        ds = apply_standardizer(model.standardizer, ds)
    c = _config_section(args, "contrastive")
    cfg = ContrastiveConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in c.items()})
    tr = _config_section(args, "training")
    epochs = args.epochs if args.epochs is not None else int(tr["epochs"])
    model, _, history = train_autoencoder(model, ds, cfg, epochs, int(tr["batch_size"]), args.seed)
    save_model(model, args.out)
    if args.loss_csv:
        history.write_csv(args.loss_csv)
    _emit(args, {"epochs": epochs, "final_total": history.rows[-1][2], "final_recon": history.rows[-1][3], "out": str(args.out)})


def cmd_encode(args):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    X = ds.vectors if model.standardizer is None else model.standardizer.forward(ds.vectors)
    save_dataset(ds.with_vectors(encode_batch(model, X).astype(np.float64)), args.out)
    _emit(args, {"records": len(ds), "bottleneck": model.config.bottleneck, "out": str(args.out)})


def cmd_decode(args):
    model = load_model(args.model)
    ds = load_dataset(args.data)
    W = decode_batch(model, ds.vectors).astype(np.float64)
    if model.standardizer is not None:
        W = model.standardizer.inverse(W)
    save_dataset(ds.with_vectors(W), args.out)
    _emit(args, {"records": len(ds), "dim": W.shape[1], "out": str(args.out)})


def cmd_fit_gmm(args):
    ds = load_dataset(args.data)
    sel = GroupSelector.parse(args.group).validate(ds.schema)
    X = ds.vectors[sel.mask(ds)]
    g = _config_section(args, "gmm")
    if args.components is not None:
        g["n_components"] = args.components
    if args.covariance is not None:
        g["covariance"] = args.covariance
    g["seed"] = args.seed
    model, history = em_fit(X, EmConfig(**g), group=sel)
    save_gmm(model, args.out)
    _emit(args, {"group": str(sel), "samples": len(X), "iterations": model.meta["iterations"],
                 "mean_ll": history[-1], "out": str(args.out)})


def cmd_loglik(args):
    gmm = load_gmm(args.gmm)
    ds = load_dataset(args.data)
    ll = score_samples(gmm, ds.vectors)
    lines = ["id,loglik"] + [f"{int(i)},{float(v)!r}" for i, v in zip(ds.ids, ll)]
    _write_or_print(args.out, "\n".join(lines) + "\n")
    if args.out:
        _emit(args, {"records": len(ds), "mean_ll": float(ll.mean()), "out": str(args.out)})


def cmd_sample(args):
    model = load_model(args.model)
    gmm = load_gmm(args.gmm)
    schema = load_dataset(args.schema_from).schema
    sel = GroupSelector.from_json(gmm.group).validate(schema) if gmm.group is not None else GroupSelector(())
    w, _ = run_sample_group(model, gmm, args.n, args.seed)
    save_dataset(sampled_dataset(schema, sel, w), args.out)
    _emit(args, {"group": str(sel), "records": args.n, "out": str(args.out)})


def cmd_handoff(args):
    ds = load_dataset(args.data)
    side = emit_generator_handoff(ds.vectors, args.out, args.styles)
    _emit(args, {"records": len(ds), "styles": args.styles, "width": ds.dim // args.styles, "sidecar": str(side)})


def _classifier(args):
    train = load_dataset(args.train)
    values = train.schema.values(args.axis)
    return train_softmax_classifier(train.vectors, train.axis_labels(args.axis), len(values), args.axis, values,
                                    epochs=args.epochs, seed=args.seed)


def cmd_classify(args):
    clf = _classifier(args)
    ds = load_dataset(args.data)
    pred = classify_batch(clf, ds.vectors)
    lines = ["id,predicted"] + [f"{int(i)},{clf.classes[p]}" for i, p in zip(ds.ids, pred)]
    _write_or_print(args.out, "\n".join(lines) + "\n")


def cmd_confusion(args):
    clf = _classifier(args)
    ds = load_dataset(args.data)
    true = ds.axis_labels(args.axis)
    known = true < clf.n_classes
    if not known.any():
        raise ValidationError(f"no records in {args.data} carry a value on axis {args.axis!r}")
    cm = confusion_from_predictions(true[known], classify_batch(clf, ds.vectors[known]), clf.n_classes, args.axis, clf.classes)
    cm.write_csv(args.out)
    _emit(args, {"axis": args.axis, "accuracy": cm.accuracy, "out": str(args.out)})


def cmd_simscore(args):
    a = load_dataset(args.a).vectors
    b = load_dataset(args.b).vectors if args.b else None
    if args.limit:
        a = a[: args.limit]
        b = b[: args.limit] if b is not None else None
    dist = score_distributions(a, b, mode="between" if b is not None else "within", label=args.label)
    dist.write_csv(args.out)
    result = {"scores": dist.count, "min": float(dist.scores.min()), "max": float(dist.scores.max()), "out": str(args.out)}
    if args.reference:
        ref = score_distributions(load_dataset(args.reference).vectors[: args.limit or None], label="reference")
        result["intersection"] = histogram_intersection(dist, ref)
        if args.svg:
            Path(args.svg).write_text(histogram_svg(dist.edges, [dist.counts, ref.counts], [dist.label, "reference"],
                                                    "similarity scores", "score"))
    elif args.svg:
        Path(args.svg).write_text(histogram_svg(dist.edges, [dist.counts], [dist.label], "similarity scores", "score"))
    _emit(args, result)


def cmd_llsep(args):
    ds = load_dataset(args.data)
    gmm_g, gmm_h = load_gmm(args.gmm_g), load_gmm(args.gmm_h)
    sel_g = GroupSelector.from_json(gmm_g.group).validate(ds.schema)
    sel_h = GroupSelector.from_json(gmm_h.group).validate(ds.schema)
    rep = ll_separation(gmm_g, gmm_h, ds.vectors[sel_g.mask(ds)], ds.vectors[sel_h.mask(ds)],
                        names=(sel_g.slug(), sel_h.slug()))
    rep.write_csv(args.out)
    if args.svg:
        Path(args.svg).write_text(scatter_svg(rep.rows[:, 1:], rep.rows[:, 0].astype(int), [str(sel_g), str(sel_h)],
                                              "log-likelihood", f"LL under {sel_g}", f"LL under {sel_h}"))
    _emit(args, {"accuracy": rep.accuracy, "out": str(args.out)})


def cmd_project(args):
    ds = load_dataset(args.data)
    proj = pca_project(ds.vectors, 2)
    keys = ds.group_keys()
    uniq, color = np.unique(keys, return_inverse=True)
    names = []
    for k in uniq:
        row = ds.labels[np.argmax(keys == k)]
        names.append(",".join(
            f"{n}={v[i]}" if i < len(v) else f"{n}=?" for (n, v), i in zip(ds.schema.axes, row)
        ))
    write_projection_csv(args.out, proj, ds.ids, [names[c] for c in color])
    if args.svg:
        Path(args.svg).write_text(scatter_svg(proj.coords, color, names, "PCA projection",
                                              f"PC1 ({proj.explained[0]:.1%})", f"PC2 ({proj.explained[1]:.1%})"))
    _emit(args, {"explained": [float(x) for x in proj.explained], "out": str(args.out)})


def cmd_run(args):
    if not args.out:
        raise UsageError("run: error: --out is required")
    cfg = PipelineConfig.from_file(args.config, args.seed) if args.config else PipelineConfig.from_dict({}, args.seed)
    manifest = run_full_pipeline(cfg, args.out, stop_after=args.stage, resume=not args.no_resume)
    _emit(args, {"manifest": str(Path(args.out) / "manifest.json"), "manifest_hash": manifest.content_hash(),
                 "stages": list(manifest.stages)})


def cmd_report(args):
    out = Path(args.out)
    metrics_path = out / "metrics.json"
    if not metrics_path.exists():
        raise FileNotFoundError(f"{metrics_path} not found; run the evaluate stage first")
    m = json.loads(metrics_path.read_text())
    if args.json:
        print(json.dumps(m, sort_keys=True))
        return
    print(f"held-out relative reconstruction error: {m['reconstruction_rel_error']:.4f}")
    for axis, c in sorted(m["classification"].items()):
        print(f"sample classification [{axis}]: {c['accuracy']:.4f}")
    for pair, e in sorted(m["ll_separation"].items()):
        print(f"LL separation {pair}: " + ", ".join(f"{k}={v:.3f}" for k, v in sorted(e.items())))
    for g, s in sorted(m["similarity"].items()):
        print(f"similarity overlap [{g}]: {s['intersection']:.3f}")


def _write_or_print(path, text):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="JSON-lines logs on stderr and JSON results on stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")

    p = _Parser(prog="grouplatent", description="Group-conditional latent modeling toolkit.", parents=[common])
    p.add_argument("--version", action="version", version=f"grouplatent {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("synth-data", cmd_synth_data, "generate a toy labeled latent dataset")
    sp.add_argument("--schema", help="schema JSON file ({\"axes\": [...]})")
    sp.add_argument("--n-per-group", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--sem-dim", type=int)
    sp.add_argument("--separation", type=float)
    sp.add_argument("--out", required=True)

    sp = add("split", cmd_split, "stratified train/test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--test-fraction", type=float, default=0.25)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("train-ae", cmd_train_ae, "train the contrastive autoencoder")
    sp.add_argument("--data", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--no-standardize", action="store_true")
    sp.add_argument("--loss-csv")
    sp.add_argument("--out", required=True)

    for name, func, text in (("encode", cmd_encode, "map latents to bottleneck vectors"),
                             ("decode", cmd_decode, "map bottleneck vectors back to latents")):
        sp = add(name, func, text)
        sp.add_argument("--model", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--out", required=True)

    sp = add("fit-gmm", cmd_fit_gmm, "fit a Gaussian mixture to one group")
    sp.add_argument("--data", required=True)
    sp.add_argument("--group", default="", help="selector such as gender=female,race=white")
    sp.add_argument("--components", type=int)
    sp.add_argument("--covariance", choices=("diag", "full"))
    sp.add_argument("--out", required=True)

    sp = add("loglik", cmd_loglik, "per-record log-likelihood under a mixture")
    sp.add_argument("--gmm", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")

    sp = add("sample", cmd_sample, "sample group-conditional latents")
    sp.add_argument("--model", required=True)
    sp.add_argument("--gmm", required=True)
    sp.add_argument("--schema-from", required=True, help="dataset whose schema labels the samples")
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--out", required=True)

    sp = add("handoff", cmd_handoff, "write latents as raw float32 for an external generator")
    sp.add_argument("--data", required=True)
    sp.add_argument("--styles", type=int, required=True)
    sp.add_argument("--out", required=True)

    for name, func, text in (("classify", cmd_classify, "predict one axis with a softmax classifier"),
                             ("confusion", cmd_confusion, "confusion matrix for one axis")):
        sp = add(name, func, text)
        sp.add_argument("--train", required=True, help="labeled vectors to train the classifier on")
        sp.add_argument("--axis", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--epochs", type=int, default=300)
        sp.add_argument("--out", required=(name == "confusion"))

    sp = add("simscore", cmd_simscore, "cosine similarity score distribution")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b")
    sp.add_argument("--reference", help="dataset whose within-set scores are compared")
    sp.add_argument("--limit", type=int, default=0)
    sp.add_argument("--label", default="scores")
    sp.add_argument("--svg")
    sp.add_argument("--out", required=True)

    sp = add("llsep", cmd_llsep, "likelihood separation between two group mixtures")
    sp.add_argument("--gmm-g", required=True)
    sp.add_argument("--gmm-h", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--out", required=True)

    sp = add("project", cmd_project, "2-D PCA projection")
    sp.add_argument("--data", required=True)
    sp.add_argument("--svg")
    sp.add_argument("--out", required=True)

    sp = add("run", cmd_run, "run the full pipeline")
    sp.add_argument("--out", help="run directory")
    sp.add_argument("--stage", choices=STAGES, help="stop after this stage")
    sp.add_argument("--no-resume", action="store_true")

    sp = add("report", cmd_report, "summarize a finished run")
    sp.add_argument("--out", required=True, help="run directory")
    return p


def _exit_code(exc):
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (UsageError, ValidationError)):
        return EXIT_VALIDATION
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (NumericError, ArithmeticError, FloatingPointError)):
        return EXIT_NUMERIC
    return None


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    _setup_logging(args.json, args.verbose)
    if not getattr(args, "command", None):
        sys.stderr.write(parser.format_usage())
        return EXIT_VALIDATION
    try:
        args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        log.error("%s", exc)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
