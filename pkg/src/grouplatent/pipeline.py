"""End-to-end orchestration: data -> autoencoder -> per-group GMMs -> samples -> reports.

Every stage reads its inputs from and writes its outputs to the run
directory, so a stage can be re-run on its own and a resumed run produces
the same bytes as a fresh one.
"""

import copy
import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .autoencoder import (
    AutoencoderConfig,
    decode_batch,
    encode_batch,
    init_autoencoder,
    load_model,
    save_model,
)
from .contrastive import ContrastiveConfig, train_autoencoder
from .dataset import (
    DemographicSchema,
    GroupSelector,
    LatentDataset,
    apply_standardizer,
    fit_standardizer,
    load_dataset,
    save_dataset,
    split_dataset,
    synth_toy_dataset,
)
from .errors import ConfigError, FormatError, ShapeError, ValidationError
from .evaluation import (
    confusion_from_predictions,
    classify_batch,
    histogram_intersection,
    histogram_scores,
    ll_separation,
    nearest_neighbor_scores,
    pca_project,
    score_distributions,
    train_softmax_classifier,
    write_projection_csv,
)
from .gmm import EmConfig, em_fit, gmm_sample, load_gmm, save_gmm
from .svg import histogram_svg, scatter_svg

log = logging.getLogger(__name__)

STAGES = ("data", "split", "train_ae", "encode", "fit_gmm", "sample", "evaluate")

DEFAULT_CONFIG = {
    "data": {
        "source": "synth",
        "path": None,
        "schema": {
            "axes": [
                {"name": "gender", "values": ["male", "female"]},
                {"name": "race", "values": ["white", "hispanic"]},
            ]
        },
        "n_per_group": 500,
        "sem_dim": 8,
        "dim": 64,
        "separation": 4.0,
        "test_fraction": 0.25,
        "standardize": True,
    },
    "autoencoder": {
        "encoder_dims": [64, 256, 256, 128, 32],
        "leaky_slope": 0.2,
        "learning_rate": 0.001,
    },
    "training": {"epochs": 200, "batch_size": 192},
    "contrastive": {"alpha": 1.0, "axis_weights": None, "lambda1": 100.0, "lambda2": 1.0},
    "gmm": {"n_components": 16, "covariance": "diag", "max_iters": 200, "tol": 1e-6, "reg_covar": 1e-6, "restarts": 1},
    "groups": None,  # None -> every full group combination
    "n_samples": 1000,
    "evaluation": {"classifier_epochs": 300, "score_samples": 200, "raw_space_baseline": True},
    "handoff_styles": None,
    "seed": 0,
}


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key != "schema":
            for sub in value:
                if sub not in out[key] and key not in ("autoencoder", "gmm", "contrastive"):
                    raise ConfigError(f"unknown config key {key}.{sub}")
            out[key] = {**out[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class PipelineConfig:
    raw: dict

    @classmethod
    def from_dict(cls, obj=None, seed=None):
        raw = _merge(DEFAULT_CONFIG, obj or {})
        if seed is not None:
            raw["seed"] = int(seed)
        cfg = cls(raw)
        cfg.validate_static()
        return cfg

    @classmethod
    def from_file(cls, path, seed=None):
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(obj, seed)

    def canonical(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    @property
    def seed(self):
        return int(self.raw["seed"])

    def stage_seed(self, *names):
        key = ":".join([str(self.seed), *map(str, names)])
        return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1

    def contrastive(self):
        return ContrastiveConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in self.raw["contrastive"].items()})

    def autoencoder(self, dim):
        obj = dict(self.raw["autoencoder"])
        obj["seed"] = self.stage_seed("ae_init")
        enc = list(obj.get("encoder_dims", []))
        if enc and enc[0] != dim:
            raise ConfigError(f"encoder input width {enc[0]} does not match dataset dim {dim}")
        return AutoencoderConfig.from_json(obj)

    def em(self, group_slug, space="bottleneck"):
        obj = dict(self.raw["gmm"])
        obj["seed"] = self.stage_seed("gmm", space, group_slug)
        return EmConfig(**obj)

    def schema(self):
        data = self.raw["data"]
        if data["source"] == "synth":
            return DemographicSchema.from_json(data["schema"])
        return load_dataset(data["path"]).schema

    def groups(self, schema):
        entries = self.raw["groups"]
        if entries is None:
            return [GroupSelector.for_combination(schema, c) for c in schema.combinations()]
        return [GroupSelector.from_json(g).validate(schema) for g in entries]

    def validate_static(self):
        data = self.raw["data"]
        if data["source"] not in ("synth", "file"):
            raise ConfigError("data.source must be 'synth' or 'file'")
        if data["source"] == "file":
            if not data.get("path"):
                raise ConfigError("data.path is required when data.source is 'file'")
            if not Path(data["path"]).exists():
                raise ConfigError(f"dataset file {data['path']} does not exist")
        if int(self.raw["n_samples"]) < 1:
            raise ConfigError("n_samples must be >= 1")
        if int(self.raw["training"]["batch_size"]) < 2:
            raise ConfigError("training.batch_size must be >= 2")
        self.contrastive()
        EmConfig(**self.raw["gmm"])
        schema = self.schema()
        groups = self.groups(schema)
        if len({g.slug() for g in groups}) != len(groups):
            raise ConfigError("group selectors must be distinct")
        return schema


# --------------------------------------------------------------------------
# sampling and generator handoff
# --------------------------------------------------------------------------


def run_sample_group(model, gmm, n, seed, st="model"):
    """Sample bottlenecks from ``gmm``, decode, and undo standardization.

    Returns ``(latents, bottlenecks)``. ``st`` defaults to the model's own
    standardizer; pass ``None`` to skip de-standardization.
    """
    if gmm.dim != model.config.bottleneck:
        raise ShapeError(f"GMM width {gmm.dim} does not match bottleneck width {model.config.bottleneck}")
    b = gmm_sample(gmm, n, seed)
    w = decode_batch(model, b).astype(np.float64)
    st = model.standardizer if st == "model" else st
    if st is not None:
        w = st.inverse(w)
    return w, b


def sampled_dataset(schema, selector, vectors):
    """Wrap sampled vectors as a dataset; axes the selector leaves open get the reserved value."""
    ext = schema.with_unknown()
    row = []
    fixed = dict(selector.clauses)
    for name, values in schema.axes:
        row.append(values.index(fixed[name]) if name in fixed else len(values))
    labels = np.tile(np.array(row, dtype=np.int64), (len(vectors), 1))
    vectors = np.asarray(vectors, dtype=np.float32).astype(np.float64)
    return LatentDataset(ext, vectors, labels, np.arange(len(vectors), dtype=np.uint64))


def emit_generator_handoff(latents, path, styles):
    """Write ``n x styles x width`` float32 little-endian latents plus a JSON sidecar."""
    latents = np.asarray(latents)
    if latents.ndim != 2:
        raise ShapeError("latents must be an (n, d) array")
    n, d = latents.shape
    if styles < 1 or d % styles:
        raise ValidationError(f"latent width {d} is not divisible by {styles} styles")
    width = d // styles
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(latents, dtype="<f4").tobytes())
    sidecar = {
        "shape": [n, styles, width],
        "dtype": "float32",
        "byte_order": "little",
        "order": "C",
        "file": path.name,
    }
    side = Path(str(path) + ".json")
    side.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return side


def read_generator_handoff(path):
    side = json.loads(Path(str(path) + ".json").read_text())
    if side.get("dtype") != "float32" or side.get("byte_order") != "little":
        raise FormatError("handoff sidecar must describe little-endian float32 data")
    shape = tuple(side["shape"])
    buf = Path(path).read_bytes()
    if len(buf) != 4 * int(np.prod(shape)):
        raise FormatError("handoff file size does not match sidecar shape")
    return np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    versions: dict
    stages: dict = field(default_factory=dict)  # name -> {"artifacts": {key: {...}}, "seconds": float}
    timestamp: str = ""

    def content_hash(self):
        body = {
            "config_hash": self.config_hash,
            "versions": self.versions,
            "stages": {
                name: {k: a["sha256"] for k, a in sorted(st["artifacts"].items())}
                for name, st in sorted(self.stages.items())
            },
        }
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def artifacts(self):
        for st in self.stages.values():
            yield from st["artifacts"].values()

    def to_json(self):
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "versions": self.versions,
            "timestamp": self.timestamp,
            "stages": self.stages,
            "manifest_hash": self.content_hash(),
        }

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, out_dir):
        path = Path(out_dir) / "manifest.json"
        if not path.exists():
            return None
        try:
            obj = json.loads(path.read_text())
            return cls(obj["config"], obj["config_hash"], obj["versions"], obj["stages"], obj.get("timestamp", ""))
        except (json.JSONDecodeError, KeyError):
            log.warning("ignoring unreadable manifest at %s", path)
            return None


def versions():
    return {"grouplatent": __version__, "numpy": np.__version__, "backend": _kernels.BACKEND}


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------


class _Run:
    def __init__(self, cfg, out_dir, timestamp):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.ts = timestamp
        self.produced = {}

    def path(self, name):
        return self.out / name

    def emit(self, key, name=None):
        """Register an artifact written under ``name`` (defaults to ``key``)."""
        p = self.path(name or key)
        self.produced[key] = {"path": p.name, "sha256": sha256_file(p)}
        return p

    def report_path(self, kind, group, ext):
        return f"report_{kind}_{group}_{self.ts}.{ext}", f"report_{kind}_{group}.{ext}"

    def write_text(self, key, text, name=None):
        self.path(name or key).write_text(text)
        return self.emit(key, name)


def _stage_data(run):
    cfg = run.cfg.raw["data"]
    if cfg["source"] == "synth":
        schema = DemographicSchema.from_json(cfg["schema"])
        ds, truth = synth_toy_dataset(
            schema, int(cfg["n_per_group"]), int(cfg["sem_dim"]), int(cfg["dim"]),
            float(cfg["separation"]), run.cfg.stage_seed("synth"),
        )
        run.write_text("ground_truth.json", json.dumps(truth.to_json(), sort_keys=True) + "\n")
    else:
        ds = load_dataset(cfg["path"])
    save_dataset(ds, run.path("dataset.latd"))
    run.emit("dataset.latd")


def _stage_split(run):
    ds = load_dataset(run.path("dataset.latd"))
    train, test = split_dataset(ds, float(run.cfg.raw["data"]["test_fraction"]), run.cfg.stage_seed("split"))
    save_dataset(train, run.path("train.latd"))
    save_dataset(test, run.path("test.latd"))
    run.emit("train.latd")
    run.emit("test.latd")


def _stage_train_ae(run):
    train = load_dataset(run.path("train.latd"))
    model = init_autoencoder(run.cfg.autoencoder(train.dim))
    if run.cfg.raw["data"]["standardize"]:
        model.standardizer = fit_standardizer(train)
        train = apply_standardizer(model.standardizer, train)
    tr = run.cfg.raw["training"]

    def progress(epoch, row):
        if epoch % 20 == 0 or epoch == int(tr["epochs"]) - 1:
            log.info("train_ae epoch=%d total=%.4f recon=%.5f", epoch, row[2], row[3])

    model, _, history = train_autoencoder(
        model, train, run.cfg.contrastive(), int(tr["epochs"]), int(tr["batch_size"]),
        run.cfg.stage_seed("batches"), progress=progress,
    )
    save_model(model, run.path("model.lmae"))
    run.emit("model.lmae")
    history.write_csv(run.path("loss_curve.csv"))
    run.emit("loss_curve.csv")


def _encode_dataset(model, ds):
    X = ds.vectors if model.standardizer is None else model.standardizer.forward(ds.vectors)
    return ds.with_vectors(encode_batch(model, X).astype(np.float64))


def _stage_encode(run):
    model = load_model(run.path("model.lmae"))
    for split in ("train", "test"):
        ds = load_dataset(run.path(f"{split}.latd"))
        save_dataset(_encode_dataset(model, ds), run.path(f"{split}_bottleneck.latd"))
        run.emit(f"{split}_bottleneck.latd")


def _check_group_size(n, M, group):
    if n < 5 * M:
        raise ValidationError(f"group {group} has {n} samples; at least {5 * M} needed for M={M}")
    if n < 20 * M:
        log.warning("group %s has only %d samples for M=%d components", group, n, M)


def _stage_fit_gmm(run):
    train_b = load_dataset(run.path("train_bottleneck.latd"))
    train_raw = load_dataset(run.path("train.latd"))
    baseline = run.cfg.raw["evaluation"]["raw_space_baseline"]
    for g in run.cfg.groups(train_b.schema):
        mask = g.mask(train_b)
        _check_group_size(int(mask.sum()), run.cfg.raw["gmm"]["n_components"], g)
        model, _ = em_fit(train_b.vectors[mask], run.cfg.em(g.slug()), group=g)
        save_gmm(model, run.path(f"gmm_{g.slug()}.lgmm"))
        run.emit(f"gmm_{g.slug()}.lgmm")
        if baseline:
            raw, _ = em_fit(train_raw.vectors[mask], run.cfg.em(g.slug(), "raw"), group=g)
            save_gmm(raw, run.path(f"gmm_raw_{g.slug()}.lgmm"))
            run.emit(f"gmm_raw_{g.slug()}.lgmm")


def _stage_sample(run):
    model = load_model(run.path("model.lmae"))
    schema = load_dataset(run.path("train.latd")).schema
    n = int(run.cfg.raw["n_samples"])
    styles = run.cfg.raw["handoff_styles"]
    for g in run.cfg.groups(schema):
        gmm = load_gmm(run.path(f"gmm_{g.slug()}.lgmm"))
        w, b = run_sample_group(model, gmm, n, run.cfg.stage_seed("sample", g.slug()))
        save_dataset(sampled_dataset(schema, g, w), run.path(f"samples_{g.slug()}.latd"))
        run.emit(f"samples_{g.slug()}.latd")
        save_dataset(sampled_dataset(schema, g, b), run.path(f"samples_bottleneck_{g.slug()}.latd"))
        run.emit(f"samples_bottleneck_{g.slug()}.latd")
        if styles:
            raw = run.path(f"handoff_{g.slug()}.f32")
            emit_generator_handoff(load_dataset(run.path(f"samples_{g.slug()}.latd")).vectors, raw, int(styles))
            run.emit(raw.name)
            run.emit(raw.name + ".json")


def _disjoint(g, h):
    a, b = dict(g.clauses), dict(h.clauses)
    return any(k in b and b[k] != v for k, v in a.items())


def _stage_evaluate(run):
    cfg = run.cfg.raw["evaluation"]
    schema = load_dataset(run.path("train.latd")).schema
    test = load_dataset(run.path("test.latd"))
    test_b = load_dataset(run.path("test_bottleneck.latd"))
    model = load_model(run.path("model.lmae"))
    groups = run.cfg.groups(schema)
    metrics = {"classification": {}, "ll_separation": {}, "similarity": {}, "projection": {}}

    def report(kind, group, ext, writer):
        name, key = run.report_path(kind, group, ext)
        writer(run.path(name))
        run.emit(key, name)

    # reconstruction on held-out data
    X = test.vectors if model.standardizer is None else model.standardizer.forward(test.vectors)
    rec = decode_batch(model, encode_batch(model, X)).astype(np.float64)
    if model.standardizer is not None:
        rec = model.standardizer.inverse(rec)
    centered = test.vectors - test.vectors.mean(axis=0)
    metrics["reconstruction_rel_error"] = float(np.sum((test.vectors - rec) ** 2) / np.sum(centered**2))

    # classifier trained on real held-out bottlenecks, applied to GMM samples
    samples_b = {g.slug(): load_dataset(run.path(f"samples_bottleneck_{g.slug()}.latd")).vectors for g in groups}
    for a, (axis, values) in enumerate(schema.axes):
        clf = train_softmax_classifier(
            test_b.vectors, test_b.axis_labels(axis), len(values), axis, values, epochs=int(cfg["classifier_epochs"]),
        )
        trues, preds, per_group = [], [], {}
        for g in groups:
            fixed = dict(g.clauses)
            if axis not in fixed:
                continue
            pred = classify_batch(clf, samples_b[g.slug()])
            true = np.full(len(pred), values.index(fixed[axis]))
            per_group[g.slug()] = float(np.mean(pred == true))
            trues.append(true)
            preds.append(pred)
        if not trues:
            continue
        cm = confusion_from_predictions(np.concatenate(trues), np.concatenate(preds), len(values), axis, values)
        report("confusion", axis, "csv", cm.write_csv)
        metrics["classification"][axis] = {"accuracy": cm.accuracy, "per_group": per_group, "counts": cm.counts.tolist()}

    # likelihood separation, bottleneck vs raw space
    train_spaces = {"bottleneck": test_b, "raw": test}
    for g, h in itertools.combinations(groups, 2):
        if not _disjoint(g, h):
            continue
        pair = f"{g.slug()}__vs__{h.slug()}"
        entry = {}
        for space, data in train_spaces.items():
            prefix = "gmm_" if space == "bottleneck" else "gmm_raw_"
            p_g, p_h = run.path(f"{prefix}{g.slug()}.lgmm"), run.path(f"{prefix}{h.slug()}.lgmm")
            if not (p_g.exists() and p_h.exists()):
                continue
            rep = ll_separation(load_gmm(p_g), load_gmm(p_h), data.vectors[g.mask(data)], data.vectors[h.mask(data)],
                                names=(g.slug(), h.slug()))
            entry[space] = rep.accuracy
            report(f"llsep-{space}", pair, "csv", rep.write_csv)
            report(f"llsep-{space}", pair, "svg", lambda p, rep=rep, space=space: p.write_text(scatter_svg(
                rep.rows[:, 1:], rep.rows[:, 0].astype(int), [g.slug(), h.slug()],
                f"log-likelihood ({space})", f"LL under {g.slug()}", f"LL under {h.slug()}")))
        metrics["ll_separation"][pair] = entry

    # projections of held-out data, colored by full group
    keys = test.group_keys()
    uniq, color = np.unique(keys, return_inverse=True)
    names = [str(GroupSelector.for_combination(schema, tuple(int(x) for x in test.labels[np.argmax(keys == k)]))) for k in uniq]
    for space, data in train_spaces.items():
        proj = pca_project(data.vectors, 2)
        metrics["projection"][space] = proj.explained.tolist()

        report("projection", space, "csv", lambda p, proj=proj: write_projection_csv(p, proj, test.ids, [names[c] for c in color]))
        report("projection", space, "svg", lambda p, proj=proj, space=space: p.write_text(scatter_svg(
            proj.coords, color, names, f"PCA of held-out {space} vectors",
            f"PC1 ({proj.explained[0]:.1%})", f"PC2 ({proj.explained[1]:.1%})")))

    # similarity-score distributions on raw latents
    n_scores = int(cfg["score_samples"])
    for g in groups:
        synth = load_dataset(run.path(f"samples_{g.slug()}.latd")).vectors[:n_scores]
        real = test.vectors[g.mask(test)]
        real_imp = score_distributions(real, mode="within", label="real-impostor")
        syn_imp = score_distributions(synth, mode="within", label="synthetic-impostor")
        genuine = histogram_scores(nearest_neighbor_scores(real), "genuine-analog")
        metrics["similarity"][g.slug()] = {
            "intersection": histogram_intersection(real_imp, syn_imp),
            "synthetic_min": float(syn_imp.scores.min()),
            "synthetic_max": float(syn_imp.scores.max()),
            "n_synthetic_scores": syn_imp.count,
        }

        def write_scores(p, dists=(genuine, real_imp, syn_imp)):
            lines = ["label,bin_low,bin_high,count"]
            for d in dists:
                lines += [f"{d.label},{lo:.4f},{hi:.4f},{int(c)}" for lo, hi, c in zip(d.edges[:-1], d.edges[1:], d.counts)]
            p.write_text("\n".join(lines) + "\n")

        report("scores", g.slug(), "csv", write_scores)
        report("scores", g.slug(), "svg", lambda p, d=(genuine, real_imp, syn_imp): p.write_text(histogram_svg(
            d[0].edges, [x.counts for x in d], [x.label for x in d], "similarity scores", "score")))

    run.write_text("metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")


_STAGE_FUNCS = {
    "data": _stage_data,
    "split": _stage_split,
    "train_ae": _stage_train_ae,
    "encode": _stage_encode,
    "fit_gmm": _stage_fit_gmm,
    "sample": _stage_sample,
    "evaluate": _stage_evaluate,
}


def _stage_intact(out, entry):
    if not entry or not entry.get("artifacts"):
        return False
    for art in entry["artifacts"].values():
        p = Path(out) / art["path"]
        if not p.exists() or sha256_file(p) != art["sha256"]:
            return False
    return True


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_full_pipeline(cfg, out_dir, stop_after=None, resume=True, timestamp=None):
    """Run every stage (or up to ``stop_after``) and write ``manifest.json``.

    With ``resume``, stages whose recorded artifacts are still present and
    unchanged under the same config hash are skipped; the first stage that
    must be redone forces every later stage to be redone as well.
    """
    if stop_after is not None and stop_after not in STAGES:
        raise ConfigError(f"unknown stage {stop_after!r}; expected one of {STAGES}")
    cfg.validate_static()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = timestamp or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    previous = RunManifest.read(out) if resume else None
    if previous is not None and (previous.config_hash != cfg.hash() or previous.versions != versions()):
        previous = None
    manifest = RunManifest(cfg.raw, cfg.hash(), versions(), {}, ts)
    run = _Run(cfg, out, ts)
    dirty = False
    for name in STAGES:
        entry = previous.stages.get(name) if previous else None
        if not dirty and _stage_intact(out, entry):
            log.info("stage %s: artifacts intact, skipping", name)
            manifest.stages[name] = entry
        else:
            dirty = True
            if entry:
                for art in entry.get("artifacts", {}).values():
                    stale = out / art["path"]
                    if stale.name.startswith("report_") and stale.exists():
                        stale.unlink()
            run.produced = {}
            t0 = time.perf_counter()
            log.info("stage %s: running", name)
            try:
                _STAGE_FUNCS[name](run)
            except (ValidationError, FormatError, OSError, ArithmeticError) as exc:
                manifest.write(out)
                raise StageError(name, exc) from exc
            manifest.stages[name] = {"artifacts": run.produced, "seconds": round(time.perf_counter() - t0, 3)}
        manifest.write(out)
        if name == stop_after:
            break
    return manifest


def load_metrics(out_dir):
    return json.loads((Path(out_dir) / "metrics.json").read_text())
