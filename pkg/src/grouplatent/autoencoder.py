"""Flattened MLP autoencoder with hand-written backprop and Adam.

Weights are stored as ``(fan_in, fan_out)`` so a layer is ``X @ W + b``.
Every hidden layer (the bottleneck included) uses LeakyReLU; the final
decoder layer is affine. Training runs in float32; :func:`as_dtype` makes a
float64 copy for gradient checks.
"""

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Standardizer
from .errors import ConfigError, FormatError, NumericError, ShapeError, ValidationError

LMAE_MAGIC = b"LMAE"
LMAE_VERSION = 1

PAPER_ENCODER_DIMS = (8192, 4096, 2048, 1024, 512)


@dataclass(frozen=True)
class AutoencoderConfig:
    encoder_dims: tuple = PAPER_ENCODER_DIMS
    decoder_dims: tuple = None  # defaults to the mirror of encoder_dims
    leaky_slope: float = 0.01
    init: str = "he_uniform"
    seed: int = 0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        enc = tuple(int(x) for x in self.encoder_dims)
        dec = tuple(int(x) for x in (self.decoder_dims or enc[::-1]))
        object.__setattr__(self, "encoder_dims", enc)
        object.__setattr__(self, "decoder_dims", dec)
        if len(enc) < 2 or len(dec) < 2:
            raise ConfigError("encoder and decoder need at least an input and an output width")
        if min(enc + dec) < 1:
            raise ConfigError(f"layer widths must be >= 1, got {enc} / {dec}")
        if dec[0] != enc[-1]:
            raise ConfigError(f"decoder input {dec[0]} != bottleneck width {enc[-1]}")
        if dec[-1] != enc[0]:
            raise ConfigError(f"decoder output {dec[-1]} != encoder input {enc[0]}")
        if self.init != "he_uniform":
            raise ConfigError(f"unsupported init scheme {self.init!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def dim(self):
        return self.encoder_dims[0]

    @property
    def bottleneck(self):
        return self.encoder_dims[-1]

    @property
    def n_encoder_layers(self):
        return len(self.encoder_dims) - 1

    def layer_shapes(self):
        dims = list(self.encoder_dims) + list(self.decoder_dims[1:])
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def to_json(self):
        obj = asdict(self)
        obj["encoder_dims"] = list(self.encoder_dims)
        obj["decoder_dims"] = list(self.decoder_dims)
        return obj

    @classmethod
    def from_json(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown autoencoder config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(eq=False)
class AutoencoderModel:
    config: AutoencoderConfig
    weights: list
    biases: list
    standardizer: Standardizer = None

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list  # pre-activation per layer
    post: list  # activation per layer
    n_encoder_layers: int

    @property
    def bottleneck(self):
        return self.post[self.n_encoder_layers - 1]

    @property
    def reconstruction(self):
        return self.post[-1]


@dataclass
class Gradients:
    weights: list
    biases: list

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def init_autoencoder(cfg):
    """He-uniform weights with bound sqrt(6/fan_in); zero biases."""
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    weights, biases = [], []
    for fan_in, fan_out in cfg.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return AutoencoderModel(cfg, weights, biases)


def as_dtype(model, dtype):
    dtype = np.dtype(dtype)
    return AutoencoderModel(
        replace(model.config, dtype=dtype.name),
        [W.astype(dtype) for W in model.weights],
        [b.astype(dtype) for b in model.biases],
        model.standardizer,
    )


def _leaky(x, slope):
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def _check_input(X, width, what):
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"{what} expects width {width}, got shape {X.shape}")
    return X


def _run_layers(model, X, start, stop, trace=None):
    slope = model.config.leaky_slope
    last = model.n_layers - 1
    A = X
    for i in range(start, stop):
        Z = A @ model.weights[i] + model.biases[i]
        A = Z if i == last else _leaky(Z, slope)
        if not np.all(np.isfinite(A)):
            raise NumericError(f"non-finite activation in layer {i}", where=f"layer {i}")
        if trace is not None:
            trace.pre.append(Z)
            trace.post.append(A)
    return A


def encode_batch(model, W):
    W = _check_input(W, model.config.dim, "encode").astype(model.dtype, copy=False)
    return _run_layers(model, W, 0, model.config.n_encoder_layers)


def decode_batch(model, B):
    B = _check_input(B, model.config.bottleneck, "decode").astype(model.dtype, copy=False)
    return _run_layers(model, B, model.config.n_encoder_layers, model.n_layers)


def forward(model, W):
    W = _check_input(W, model.config.dim, "forward").astype(model.dtype, copy=False)
    trace = ForwardTrace(W, [], [], model.config.n_encoder_layers)
    _run_layers(model, W, 0, model.n_layers, trace)
    return trace


def encode_raw(model, W):
    """Encode raw-space vectors, applying the stored standardizer first."""
    if model.standardizer is not None:
        W = model.standardizer.forward(W)
    return encode_batch(model, W)


def decode_raw(model, B):
    """Decode bottlenecks and map back to raw latent space."""
    out = decode_batch(model, B).astype(np.float64)
    if model.standardizer is not None:
        out = model.standardizer.inverse(out)
    return out


def backward_pass(model, trace, dL_dB, dL_dW):
    """Reverse-mode gradients given partials at the bottleneck and the output.

    The bottleneck gradient is injected where the encoder's last activation
    is produced, so it adds to whatever flows back through the decoder.
    """
    n = trace.inputs.shape[0]
    q, d = model.config.bottleneck, model.config.dim
    dtype = model.dtype
    if dL_dB is None:
        dL_dB = np.zeros((n, q), dtype)
    if dL_dW is None:
        dL_dW = np.zeros((n, d), dtype)
    dL_dB = np.asarray(dL_dB, dtype=dtype)
    dL_dW = np.asarray(dL_dW, dtype=dtype)
    if dL_dB.shape != (n, q) or dL_dW.shape != (n, d):
        raise ShapeError(
            f"gradient shapes {dL_dB.shape}/{dL_dW.shape} do not match batch ({n},{q})/({n},{d})"
        )
    slope = dtype.type(model.config.leaky_slope)
    last = model.n_layers - 1
    ne = model.config.n_encoder_layers
    gW = [None] * model.n_layers
    gb = [None] * model.n_layers
    dA = dL_dW
    for i in range(last, -1, -1):
        if i == ne - 1:
            dA = dA + dL_dB
        Z = trace.pre[i]
        dZ = dA if i == last else np.where(Z >= 0, dA, dA * slope)
        A_prev = trace.inputs if i == 0 else trace.post[i - 1]
        gW[i] = A_prev.T @ dZ
        gb[i] = dZ.sum(axis=0)
        if i > 0:
            dA = dZ @ model.weights[i].T
    return Gradients(gW, gb)


def init_adam(model):
    zeros = [np.zeros_like(p) for p in model.parameters()]
    return AdamState(zeros, [np.zeros_like(p) for p in model.parameters()], 0)


def adam_step(model, grads, state):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    cfg = model.config
    params = list(model.parameters())
    gs = list(grads.parameters())
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise ShapeError("gradient shapes do not match model parameters")
    for i, g in enumerate(gs):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {i}", where=f"param {i}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.t + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, gs, state.m, state.v):
        dt = p.dtype.type
        m = dt(b1) * m + dt(1.0 - b1) * g
        v = dt(b2) * v + dt(1.0 - b2) * (g * g)
        step = dt(cfg.learning_rate) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(cfg.adam_eps))
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    model = AutoencoderModel(cfg, new_p[0::2], new_p[1::2], model.standardizer)
    return model, AdamState(new_m, new_v, t)


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple  # (parameter number, flat index)
    n_checked: int
    tol: float
    skipped: int = 0
    errors: np.ndarray = field(default=None, repr=False)

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def _flat_params(model):
    return list(model.parameters())


def gradient_check(model, loss_evaluator, h=1e-5, tol=1e-4, n_coords=200, seed=0, abs_floor=1e-8):
    """Compare analytic gradients with central differences.

    ``loss_evaluator(model)`` must return ``(loss, Gradients, signature)``,
    where ``signature`` is any hashable-by-equality object describing the
    piecewise region (activation patterns, active hinge set). Coordinates
    whose +h/-h evaluations land in different regions are skipped and
    replaced, so the check samples away from kinks. Runs in float64.
    """
    if not h > 0:
        raise ValidationError("finite-difference step h must be positive")
    model = as_dtype(model, np.float64)
    _, grads, _ = loss_evaluator(model)
    params = _flat_params(model)
    gparams = list(grads.parameters())
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    order = rng.permutation(total)
    errors = []
    worst, worst_idx, skipped = -1.0, None, 0

    for flat in order:
        if len(errors) >= n_coords:
            break
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        j = int(flat - offsets[k])
        p = params[k].reshape(-1)
        orig = p[j]
        p[j] = orig + h
        fp, _, sp = loss_evaluator(model)
        p[j] = orig - h
        fm, _, sm = loss_evaluator(model)
        p[j] = orig
        if not _same_region(sp, sm):
            skipped += 1
            continue
        num = (fp - fm) / (2.0 * h)
        ana = float(gparams[k].reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
        errors.append(err)
        if err > worst:
            worst, worst_idx = err, (k, j)
    return GradCheckReport(float(max(errors) if errors else 0.0), worst_idx, len(errors), tol, skipped, np.array(errors))


def _same_region(a, b):
    if a is None or b is None:
        return True
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same_region(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def activation_signature(trace):
    return [Z >= 0 for Z in trace.pre[:-1]]


def reconstruction_evaluator(W):
    """Loss evaluator for the batch-mean squared reconstruction error."""
    from .contrastive import reconstruction_loss

    W = np.asarray(W, dtype=np.float64)

    def evaluate(model):
        trace = forward(model, W)
        loss, dW = reconstruction_loss(W, trace.reconstruction)
        grads = backward_pass(model, trace, None, dW)
        return loss, grads, activation_signature(trace)

    return evaluate


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def model_to_bytes(model):
    cfg = model.config.to_json()
    meta = {"config": cfg, "standardizer": model.standardizer is not None}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [LMAE_MAGIC, struct.pack("<II", LMAE_VERSION, len(blob)), blob]
    for W, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    if model.standardizer is not None:
        parts.append(np.ascontiguousarray(model.standardizer.mean, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(model.standardizer.scale, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(buf):
    if len(buf) < 12 or buf[:4] != LMAE_MAGIC:
        raise FormatError("not an LMAE model file (bad magic)")
    version, blob_len = struct.unpack_from("<II", buf, 4)
    if version != LMAE_VERSION:
        raise FormatError(f"unsupported LMAE version {version}")
    off = 12
    if len(buf) < off + blob_len:
        raise FormatError("truncated LMAE config blob")
    try:
        meta = json.loads(buf[off : off + blob_len].decode("utf-8"))
        cfg_obj = dict(meta["config"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"unreadable LMAE config: {exc}") from None
    cfg_obj["dtype"] = "float32"
    cfg = AutoencoderConfig.from_json(cfg_obj)
    off += blob_len
    expected = off + sum(4 * (i * o + o) for i, o in cfg.layer_shapes())
    if meta.get("standardizer"):
        expected += 16 * cfg.dim
    if len(buf) != expected:
        raise FormatError(f"LMAE size mismatch: expected {expected} bytes, got {len(buf)}")
    weights, biases = [], []
    for fan_in, fan_out in cfg.layer_shapes():
        W = np.frombuffer(buf, "<f4", fan_in * fan_out, off).reshape(fan_in, fan_out)
        off += 4 * fan_in * fan_out
        b = np.frombuffer(buf, "<f4", fan_out, off)
        off += 4 * fan_out
        weights.append(W.astype(np.float32))
        biases.append(b.astype(np.float32))
    st = None
    if meta.get("standardizer"):
        mean = np.frombuffer(buf, "<f8", cfg.dim, off).astype(np.float64)
        off += 8 * cfg.dim
        scale = np.frombuffer(buf, "<f8", cfg.dim, off).astype(np.float64)
        st = Standardizer(mean, scale)
    return AutoencoderModel(cfg, weights, biases, st)


def save_model(model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
