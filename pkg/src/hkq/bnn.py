"""Mean-field variational Bayesian regressor for (log10 alpha, k).

Every weight w has a Gaussian posterior N(mu, softplus(rho)^2) and a
N(0, prior_stddev^2) prior. The network outputs, per target, a mean and a
log-variance (clamped to [-10, 10]); training minimizes the Monte-Carlo
ELBO

    mean_{draws, rows} sum_t 0.5 [ln s2_t + (y_t - m_t)^2 / s2_t]
        + kl_weight * KL(q || p) / dataset_size

with weights drawn by reparameterization, w = mu + softplus(rho) * xi.
Gradients are propagated by hand through the fixed layer vocabulary
(affine, softplus, Gaussian NLL, KL) and the update rule is Adam.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from hkq.errors import (
    ConfigurationError,
    DegenerateTargetError,
    FormatError,
    NumericalError,
    TrainingFailureError,
)
from hkq.rng import derive_seed, stream

FORMAT = "hkq-bnn-v1"
TARGETS = ("log10_alpha", "k")
LOGVAR_CLAMP = 10.0
WEIGHT_ORDER = (
    "for each layer in order: weight_mean[in][out], weight_rho[in][out], "
    "bias_mean[out], bias_rho[out]; row-major little-endian float64"
)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    return y + np.log(-np.expm1(-y))


@dataclass
class VariationalDense:
    weight_mean: np.ndarray
    weight_rho: np.ndarray
    bias_mean: np.ndarray
    bias_rho: np.ndarray

    def __post_init__(self):
        n_in, n_out = self.weight_mean.shape
        if self.weight_rho.shape != (n_in, n_out):
            raise ConfigurationError("weight_rho shape does not match weight_mean")
        if self.bias_mean.shape != (n_out,) or self.bias_rho.shape != (n_out,):
            raise ConfigurationError("bias shapes do not match layer width")

    @property
    def shape(self):
        return self.weight_mean.shape

    def arrays(self):
        return [self.weight_mean, self.weight_rho, self.bias_mean, self.bias_rho]


@dataclass
class BnnModel:
    layers: list
    schema_id: str
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray
    prior_stddev: float = 1.0
    activations: tuple = ()
    targets: tuple = TARGETS
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.activations:
            self.activations = ("softplus",) * (len(self.layers) - 1) + ("identity",)
        if len(self.activations) != len(self.layers):
            raise ConfigurationError("one activation tag per layer is required")
        if self.layers[-1].shape[1] != 2 * len(self.targets):
            raise ConfigurationError("output width must be 2 heads x 2 targets")
        if self.input_mean.shape != (self.layers[0].shape[0],) or self.input_std.shape != self.input_mean.shape:
            raise ConfigurationError("input normalization length must equal the feature count")
        if np.any(self.input_std <= 0) or np.any(self.target_std <= 0):
            raise ConfigurationError("normalization stddevs must be > 0")
        if not self.prior_stddev > 0:
            raise ConfigurationError("prior_stddev must be > 0")

    @property
    def widths(self):
        return [self.layers[0].shape[0]] + [layer.shape[1] for layer in self.layers]

    def params(self):
        """Flat list of every variational array, in file order."""
        return [a for layer in self.layers for a in layer.arrays()]

    def n_weights(self):
        return sum(layer.weight_mean.size + layer.bias_mean.size for layer in self.layers)

    def kl(self):
        return _kl_and_grads(self, need_grads=False)[0]


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 128
    learning_rate: float = 1e-3
    kl_weight: float = 1.0
    mc_samples_per_step: int = 1
    seed: int = 0
    log_every: int = 500
    hidden_widths: tuple = (64, 64)
    prior_stddev: float = 1.0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 2 or self.mc_samples_per_step < 1:
            raise ConfigurationError("need steps >= 1, batch_size >= 2, mc_samples_per_step >= 1")
        if not self.learning_rate > 0 or self.kl_weight < 0:
            raise ConfigurationError("learning_rate must be > 0 and kl_weight >= 0")


@dataclass
class InferenceDraws:
    """Per-input, per-draw predicted means and variances in target units."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.variances.shape or self.means.ndim != 3:
            raise ConfigurationError("means/variances must share shape [inputs, draws, targets]")


# -- construction ---------------------------------------------------------------


def init_model(schema, hidden_widths=(64, 64), prior_stddev=1.0, seed=0):
    """Fresh model with identity normalization; ``train`` fits the norms."""
    hidden_widths = list(hidden_widths)
    if not hidden_widths or any(int(w) < 1 for w in hidden_widths):
        raise ConfigurationError(f"hidden widths must be nonempty and positive, got {hidden_widths}")
    n_in = len(schema)
    widths = [n_in] + [int(w) for w in hidden_widths] + [2 * len(TARGETS)]
    rng = stream(derive_seed(seed, "init"))
    rho0 = float(inverse_softplus(0.05 * prior_stddev))
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        layers.append(
            VariationalDense(
                weight_mean=rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in),
                weight_rho=np.full((fan_in, fan_out), rho0),
                bias_mean=np.zeros(fan_out),
                bias_rho=np.full(fan_out, rho0),
            )
        )
    return BnnModel(
        layers=layers,
        schema_id=schema.id,
        input_mean=np.zeros(n_in),
        input_std=np.ones(n_in),
        target_mean=np.zeros(len(TARGETS)),
        target_std=np.ones(len(TARGETS)),
        prior_stddev=float(prior_stddev),
    )


# -- forward / backward -----------------------------------------------------------


def draw_noise(model, rng):
    """One standard-normal draw per weight and bias, shaped like the model."""
    return [(rng.standard_normal(l.weight_mean.shape), rng.standard_normal(l.bias_mean.shape)) for l in model.layers]


def _sampled_weights(model, noise):
    out = []
    for layer, (xw, xb) in zip(model.layers, noise):
        out.append((layer.weight_mean + softplus(layer.weight_rho) * xw, layer.bias_mean + softplus(layer.bias_rho) * xb))
    return out


def _forward(model, weights, x):
    """Returns output plus the per-layer cache needed by the backward pass."""
    h = x
    cache = []
    for (w, b), act in zip(weights, model.activations):
        pre = h @ w + b
        cache.append((h, pre))
        h = softplus(pre) if act == "softplus" else pre
    return h, cache


def _split_heads(out, n_targets):
    mean = out[:, :n_targets]
    raw = out[:, n_targets:]
    logvar = np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mean, raw, logvar


def _kl_and_grads(model, need_grads=True):
    p2 = model.prior_stddev**2
    log_p = math.log(model.prior_stddev)
    total = 0.0
    grads = []
    for layer in model.layers:
        for mu, rho in ((layer.weight_mean, layer.weight_rho), (layer.bias_mean, layer.bias_rho)):
            s = softplus(rho)
            total += float(np.sum(log_p - np.log(s) + (s * s + mu * mu) / (2.0 * p2) - 0.5))
            if need_grads:
                grads.append((mu / p2, (-1.0 / s + s / p2) * expit(rho)))
    return total, grads


def _elbo(model, x, y, noises, kl_weight, dataset_size, batch_index=None):
    """Loss and gradients on already-normalized inputs/targets."""
    n_rows, n_targets = y.shape
    grads = [np.zeros_like(a) for a in model.params()]
    data_loss = 0.0
    scale = 1.0 / (len(noises) * n_rows)
    for noise in noises:
        weights = _sampled_weights(model, noise)
        out, cache = _forward(model, weights, x)
        mean, raw, logvar = _split_heads(out, n_targets)
        inv_var = np.exp(-logvar)
        resid = y - mean
        data_loss += 0.5 * float(np.sum(logvar + resid * resid * inv_var)) * scale
        if not math.isfinite(data_loss):
            raise NumericalError("non-finite ELBO", batch_index)

        d_out = np.empty_like(out)
        d_out[:, :n_targets] = -resid * inv_var * scale
        inside = (raw >= -LOGVAR_CLAMP) & (raw <= LOGVAR_CLAMP)
        d_out[:, n_targets:] = np.where(inside, 0.5 * (1.0 - resid * resid * inv_var) * scale, 0.0)

        delta = d_out
        for i in range(len(model.layers) - 1, -1, -1):
            h_in, pre = cache[i]
            if model.activations[i] == "softplus":
                delta = delta * expit(pre)
            d_w = h_in.T @ delta
            d_b = delta.sum(axis=0)
            if i > 0:
                delta_next = delta @ weights[i][0].T
            layer = model.layers[i]
            xw, xb = noise[i]
            g = grads[4 * i : 4 * i + 4]
            g[0] += d_w
            g[1] += d_w * xw * expit(layer.weight_rho)
            g[2] += d_b
            g[3] += d_b * xb * expit(layer.bias_rho)
            if i > 0:
                delta = delta_next

    loss = data_loss
    if kl_weight:
        kl, kl_grads = _kl_and_grads(model)
        c = kl_weight / dataset_size
        loss += c * kl
        for j, (g_mu, g_rho) in enumerate(kl_grads):
            grads[2 * j] += c * g_mu
            grads[2 * j + 1] += c * g_rho
    if not math.isfinite(loss):
        raise NumericalError("non-finite ELBO", batch_index)
    return loss, grads


def normalize_inputs(model, features):
    return (np.asarray(features, dtype=np.float64) - model.input_mean) / model.input_std


def elbo_loss(model, features, targets, mc_samples=1, kl_weight=1.0, dataset_size=1, seed=0, noise=None, batch_index=None):
    """Negative ELBO of one batch and its gradient w.r.t. ``model.params()``.

    ``noise`` pins the reparameterization draws (a list with one entry per
    Monte-Carlo sample, as produced by :func:`draw_noise`); otherwise they are
    drawn from ``seed``.
    """
    x = normalize_inputs(model, np.atleast_2d(features))
    y = (np.atleast_2d(np.asarray(targets, dtype=np.float64)) - model.target_mean) / model.target_std
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ConfigurationError("batch must be nonempty with one target row per feature row")
    if noise is None:
        if mc_samples < 1:
            raise ConfigurationError("mc_samples must be >= 1")
        rng = stream(seed)
        noise = [draw_noise(model, rng) for _ in range(mc_samples)]
    return _elbo(model, x, y, noise, kl_weight, dataset_size, batch_index)


# -- training ----------------------------------------------------------------------


@dataclass
class TrainingData:
    features: np.ndarray
    targets: np.ndarray
    schema_id: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2 or self.targets.shape != (self.features.shape[0], len(TARGETS)):
            raise ConfigurationError("features must be [n, d] and targets [n, 2]")

    def __len__(self):
        return self.features.shape[0]


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(data, config, schema=None):
    """Fit a fresh model to ``data``; returns ``(model, log)``.

    ``log`` is a list of ``{"step", "loss"}`` records, one every
    ``config.log_every`` steps (plus the last step), where loss is the mean
    minibatch loss since the previous record.
    """
    from hkq.features import get_schema

    if len(data) < config.batch_size:
        raise ConfigurationError(f"dataset has {len(data)} rows, fewer than batch_size {config.batch_size}")
    if schema is None:
        try:
            schema = get_schema(data.schema_id)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
    if len(schema) != data.features.shape[1]:
        raise ConfigurationError("feature width does not match schema")
    target_std = data.targets.std(axis=0)
    if np.any(np.ptp(data.targets, axis=0) == 0):
        raise DegenerateTargetError("training targets have zero variance")
    input_std = data.features.std(axis=0)
    if np.any(np.ptp(data.features, axis=0) == 0):
        raise DegenerateTargetError("a training feature has zero variance")

    model = init_model(schema, config.hidden_widths, config.prior_stddev, seed=config.seed)
    model.input_mean = data.features.mean(axis=0)
    model.input_std = input_std
    model.target_mean = data.targets.mean(axis=0)
    model.target_std = target_std
    model.metadata = {"train": asdict(config), "dataset_size": len(data)}
    model.metadata["train"]["hidden_widths"] = list(config.hidden_widths)

    x_all = normalize_inputs(model, data.features)
    y_all = (data.targets - model.target_mean) / model.target_std
    n = len(data)
    rng = stream(derive_seed(config.seed, "train"))
    opt = Adam(model.params(), config.learning_rate)
    log = []
    order = rng.permutation(n)
    cursor = 0
    running = 0.0
    since = 0
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        noises = [draw_noise(model, rng) for _ in range(config.mc_samples_per_step)]
        try:
            loss, grads = _elbo(model, x_all[idx], y_all[idx], noises, config.kl_weight, n, batch_index=step)
        except NumericalError as exc:
            raise TrainingFailureError("loss diverged", step) from exc
        opt.step(grads)
        running += loss
        since += 1
        if step % config.log_every == 0 or step == config.steps:
            log.append({"step": step, "loss": running / since})
            running = 0.0
            since = 0
    return model, log


# -- inference ------------------------------------------------------------------------


def predict_mc(model, features, s=50, seed=0, schema_id=None):
    """``s`` weight draws, each applied to every input row.

    Draw ``j`` uses the stream seeded by ``derive_seed(seed, "draw", j)``.
    """
    if s < 1:
        raise ConfigurationError("number of draws must be >= 1")
    if schema_id is not None and schema_id != model.schema_id:
        raise ConfigurationError(f"feature schema {schema_id!r} does not match model schema {model.schema_id!r}")
    x = normalize_inputs(model, np.atleast_2d(features))
    if x.shape[1] != model.input_mean.size:
        raise ConfigurationError(f"expected {model.input_mean.size} features, got {x.shape[1]}")
    n_t = len(model.targets)
    means = np.empty((x.shape[0], s, n_t))
    variances = np.empty_like(means)
    for j in range(s):
        noise = draw_noise(model, stream(derive_seed(seed, "draw", j)))
        out, _ = _forward(model, _sampled_weights(model, noise), x)
        mean, _, logvar = _split_heads(out, n_t)
        means[:, j] = mean * model.target_std + model.target_mean
        variances[:, j] = np.exp(logvar) * model.target_std**2
    return InferenceDraws(means, variances)


# -- persistence ----------------------------------------------------------------------


def dumps_model(model):
    """Model file contents: one JSON manifest line, then the weight block."""
    manifest = {
        "format": FORMAT,
        "schema_id": model.schema_id,
        "widths": model.widths,
        "activations": list(model.activations),
        "targets": list(model.targets),
        "prior_stddev": model.prior_stddev,
        "norms": {
            "input_mean": model.input_mean.tolist(),
            "input_std": model.input_std.tolist(),
            "target_mean": model.target_mean.tolist(),
            "target_std": model.target_std.tolist(),
        },
        "weight_order": WEIGHT_ORDER,
        "n_values": int(sum(a.size for a in model.params())),
        "metadata": model.metadata,
    }
    block = np.concatenate([a.ravel() for a in model.params()]).astype("<f8").tobytes()
    return json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n" + block


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def _field(manifest, name):
    if name not in manifest:
        raise FormatError("missing manifest entry", field=name)
    return manifest[name]


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())


def loads_model(raw):
    head, sep, block = raw.partition(b"\n")
    if not sep:
        raise FormatError("model file has no manifest line", field="format")
    try:
        manifest = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", field="format") from None
    if not isinstance(manifest, dict) or _field(manifest, "format") != FORMAT:
        raise FormatError(f"unsupported model format {manifest.get('format')!r}", field="format")
    widths = [int(w) for w in _field(manifest, "widths")]
    if len(widths) < 2:
        raise FormatError("need at least input and output widths", field="widths")
    norms = _field(manifest, "norms")
    expected = sum(2 * (a * b + b) for a, b in zip(widths[:-1], widths[1:]))
    if int(_field(manifest, "n_values")) != expected:
        raise FormatError(f"n_values {manifest['n_values']} inconsistent with widths {widths}", field="n_values")
    if len(block) != 8 * expected:
        raise FormatError(f"weight block size mismatch: {len(block)} bytes, expected {8 * expected}", field="weights")
    flat = np.frombuffer(block, dtype="<f8").astype(np.float64)
    layers = []
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        out = flat[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    for a, b in zip(widths[:-1], widths[1:]):
        layers.append(VariationalDense(take((a, b)), take((a, b)), take((b,)), take((b,))))
    try:
        return BnnModel(
            layers=layers,
            schema_id=str(_field(manifest, "schema_id")),
            input_mean=np.array(_field(norms, "input_mean"), dtype=np.float64),
            input_std=np.array(_field(norms, "input_std"), dtype=np.float64),
            target_mean=np.array(_field(norms, "target_mean"), dtype=np.float64),
            target_std=np.array(_field(norms, "target_std"), dtype=np.float64),
            prior_stddev=float(_field(manifest, "prior_stddev")),
            activations=tuple(_field(manifest, "activations")),
            targets=tuple(_field(manifest, "targets")),
            metadata=manifest.get("metadata", {}),
        )
    except ConfigurationError as exc:
        raise FormatError(str(exc), field="norms") from None

