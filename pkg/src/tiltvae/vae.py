"""Desk-scale VAE in plain numpy.

Softplus MLP encoder/decoder with hand-written reverse-mode gradients, Adam
with global-norm gradient clipping, and checkpoint I/O. Two prior variants:
the tilted prior (unit posterior covariance, quadratic KLD penalty on the
posterior-mean norm) and a standard Gaussian prior with a learned diagonal
posterior scale.

Reconstruction conventions: training and the ELBO terms use the squared l2
error (differentiable least squares); the OOD score uses the plain l2 norm.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DomainError, NumericalError, UnsupportedPriorError
from .sampler import RngStream
from .tilted import TiltedPrior, exact_kld

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_WEIGHT_STD = 0.2
# The Gaussian head exponentiates its output twice over; clamping keeps a
# freshly initialized network finite without touching trained-scale values.
_LOG_SIGMA_CLAMP = 15.0
_CHECKPOINT_MAGIC = b"TVAE"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StandardGaussian:
    """Marker for the N(0, I) prior; the encoder then also emits log sigma."""


@dataclass
class MlpParams:
    """Stacked affine layers with softplus between them (none on the last)."""

    weights: list
    biases: list

    @classmethod
    def init(cls, gen, widths, weight_std=_WEIGHT_STD):
        weights = [
            weight_std * gen.standard_normal((n_in, n_out))
            for n_in, n_out in zip(widths[:-1], widths[1:])
        ]
        biases = [np.zeros(n_out) for n_out in widths[1:]]
        return cls(weights=weights, biases=biases)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class VaeModel:
    encoder: MlpParams
    decoder: MlpParams
    prior: object  # TiltedPrior | StandardGaussian
    d_x: int
    d_z: int

    @property
    def is_tilted(self) -> bool:
        return isinstance(self.prior, TiltedPrior)

    def copy(self):
        return VaeModel(self.encoder.copy(), self.decoder.copy(), self.prior, self.d_x, self.d_z)


def build_model(rng: RngStream, d_x: int, d_z: int, prior,
                hidden=(256, 128), weight_std=_WEIGHT_STD) -> VaeModel:
    """Encoder (d_x, *hidden, d_z or 2 d_z), decoder mirrored."""
    enc_out = d_z if isinstance(prior, TiltedPrior) else 2 * d_z
    gen = rng.generator
    encoder = MlpParams.init(gen, (d_x, *hidden, enc_out), weight_std)
    decoder = MlpParams.init(gen, (d_z, *reversed(hidden), d_x), weight_std)
    return VaeModel(encoder, decoder, prior, d_x=d_x, d_z=d_z)


def _softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _mlp_forward(params, x, where):
    """Returns (output, caches); raises NumericalError naming the layer on
    non-finite activations."""
    h = x
    caches = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite activations in {where}", layer=i)
        caches.append((h, a))
        h = _softplus(a) if i < last else a
    return h, caches


def _mlp_backward(params, caches, dout):
    """Gradient of a scalar loss w.r.t. inputs and parameters."""
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.biases)
    last = len(params.weights) - 1
    da = dout
    for i in range(last, -1, -1):
        h_in, a = caches[i]
        if i < last:
            da = da * _sigmoid(a)
        d_weights[i] = h_in.T @ da
        d_biases[i] = da.sum(axis=0)
        da = da @ params.weights[i].T
    return da, (d_weights, d_biases)


def _as_batch(x, d_x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != d_x:
        raise DomainError(f"input has {x.shape[1]} features, model expects {d_x}")
    return x, single


def encode(model: VaeModel, x):
    """Deterministic encoder pass: mu, and log sigma when the prior is Gaussian."""
    xb, single = _as_batch(x, model.d_x)
    out, _ = _mlp_forward(model.encoder, xb, "encoder")
    if model.is_tilted:
        mu, log_sigma = out, None
    else:
        mu = out[:, : model.d_z]
        log_sigma = np.clip(out[:, model.d_z:], -_LOG_SIGMA_CLAMP, _LOG_SIGMA_CLAMP)
    if single:
        mu = mu[0]
        log_sigma = None if log_sigma is None else log_sigma[0]
    return mu, log_sigma


def decode(model: VaeModel, z):
    """Deterministic decoder pass."""
    zb, single = _as_batch(z, model.d_z)
    out, _ = _mlp_forward(model.decoder, zb, "decoder")
    return out[0] if single else out


def reparameterize(rng: RngStream, mu, log_sigma=None):
    """z = mu + eps * sigma with eps ~ N(0, I); sigma is 1 when log_sigma is None."""
    mu = np.asarray(mu, dtype=np.float64)
    eps = rng.generator.standard_normal(mu.shape)
    if log_sigma is None:
        return mu + eps
    return mu + eps * np.exp(np.asarray(log_sigma, dtype=np.float64))


def _kld_terms(model, mu, log_sigma):
    """Per-sample training KLD and its gradients w.r.t. encoder outputs."""
    if model.is_tilted:
        prior = model.prior
        norms = np.linalg.norm(mu, axis=1)
        kld = 0.5 * (norms - prior.gamma) ** 2 + prior.committed_rate
        safe = np.where(norms > 0.0, norms, 1.0)
        dmu = ((norms - prior.gamma) / safe)[:, None] * mu
        dmu[norms == 0.0] = 0.0
        return kld, dmu, None
    sigma2 = np.exp(2.0 * log_sigma)
    kld = 0.5 * np.sum(sigma2 + mu * mu - 1.0 - 2.0 * log_sigma, axis=1)
    return kld, mu.copy(), sigma2 - 1.0


def _elbo_forward_backward(model, x, eps, want_grads=True):
    """Mean (recon, kld) over a batch with fixed noise, plus parameter grads.

    Keeping the noise an explicit argument makes the function a deterministic
    map of (parameters, batch, noise), which is what both the optimizer step
    and the finite-difference gradient checks need.
    """
    b = x.shape[0]
    enc_out, enc_caches = _mlp_forward(model.encoder, x, "encoder")
    if model.is_tilted:
        mu, log_sigma = enc_out, None
        z = mu + eps
    else:
        mu, raw = enc_out[:, : model.d_z], enc_out[:, model.d_z:]
        log_sigma = np.clip(raw, -_LOG_SIGMA_CLAMP, _LOG_SIGMA_CLAMP)
        unclamped = np.abs(raw) < _LOG_SIGMA_CLAMP
        sigma = np.exp(log_sigma)
        z = mu + eps * sigma
    xhat, dec_caches = _mlp_forward(model.decoder, z, "decoder")
    diff = xhat - x
    recon = np.sum(diff * diff, axis=1)
    kld, dmu_kld, dlog_sigma_kld = _kld_terms(model, mu, log_sigma)
    recon_mean = float(recon.mean())
    kld_mean = float(kld.mean())
    if not want_grads:
        return recon_mean, kld_mean, None

    dz, dec_grads = _mlp_backward(model.decoder, dec_caches, 2.0 * diff / b)
    dmu = dz + dmu_kld / b
    if model.is_tilted:
        denc = dmu
    else:
        dlog_sigma = (dz * eps * sigma + dlog_sigma_kld / b) * unclamped
        denc = np.concatenate([dmu, dlog_sigma], axis=1)
    _, enc_grads = _mlp_backward(model.encoder, enc_caches, denc)
    return recon_mean, kld_mean, (enc_grads, dec_grads)


def elbo_terms(model: VaeModel, rng: RngStream, x):
    """(recon, kld) for one sample with a single reparameterized draw.

    recon is the squared l2 reconstruction error; kld is the quadratic
    surrogate for the tilted prior or the closed-form Gaussian divergence.
    """
    xb, _ = _as_batch(x, model.d_x)
    eps = rng.generator.standard_normal((xb.shape[0], model.d_z))
    recon, kld, _ = _elbo_forward_backward(model, xb, eps, want_grads=False)
    return recon, kld


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    grad_clip: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate <= 0 or self.grad_clip <= 0:
            raise DomainError(f"invalid training config {self}")


class AdamState:
    """First/second moment accumulators for every parameter tensor."""

    def __init__(self, model: VaeModel):
        self.t = 0
        self.m = [np.zeros_like(p) for p in _param_list(model)]
        self.v = [np.zeros_like(p) for p in _param_list(model)]


def _param_list(model):
    return (
        model.encoder.weights + model.encoder.biases
        + model.decoder.weights + model.decoder.biases
    )


def _grad_list(model, grads):
    (enc_w, enc_b), (dec_w, dec_b) = grads[0], grads[1]
    return enc_w + enc_b + dec_w + dec_b


def grad_step(model: VaeModel, opt: AdamState, rng: RngStream, batch, config: TrainConfig):
    """One Adam step on the mean negative ELBO over the batch (in place).

    The global gradient norm is clipped at config.grad_clip before the update.
    Returns the batch-mean (recon, kld) at the pre-update parameters.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DomainError("batch must be a non-empty (n, d_x) array")
    eps = rng.generator.standard_normal((x.shape[0], model.d_z))
    recon, kld, grads = _elbo_forward_backward(model, x, eps)
    if not (math.isfinite(recon) and math.isfinite(kld)):
        raise NumericalError("non-finite loss", recon=recon, kld=kld)
    glist = _grad_list(model, grads)
    total = math.sqrt(sum(float(np.sum(g * g)) for g in glist))
    if total > config.grad_clip:
        scale = config.grad_clip / total
        glist = [g * scale for g in glist]
    opt.t += 1
    t = opt.t
    lr = config.learning_rate
    for p, g, m, v in zip(_param_list(model), glist, opt.m, opt.v):
        m *= _ADAM_BETA1
        m += (1.0 - _ADAM_BETA1) * g
        v *= _ADAM_BETA2
        v += (1.0 - _ADAM_BETA2) * g * g
        m_hat = m / (1.0 - _ADAM_BETA1**t)
        v_hat = v / (1.0 - _ADAM_BETA2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return recon, kld


@dataclass
class TrainResult:
    model: VaeModel
    history: list  # per-epoch (recon_mean, kld_mean)
    z_bar: float
    radial_sigma: float


def encode_norms(model: VaeModel, dataset: Dataset, chunk: int = 1024) -> np.ndarray:
    """||mu(x)|| over a dataset, batched."""
    norms = []
    for i in range(0, dataset.n, chunk):
        mu, _ = encode(model, dataset.samples[i:i + chunk])
        norms.append(np.linalg.norm(mu, axis=1))
    return np.concatenate(norms)


def train(model: VaeModel, dataset: Dataset, config: TrainConfig) -> TrainResult:
    """Shuffled minibatch training, deterministic for a given seed.

    Returns the trained model (mutated in place), the per-epoch (recon, kld)
    log, and the post-training radial statistics of the encoded data.
    """
    if dataset.n < 1:
        raise DomainError("dataset is empty")
    if dataset.d_x != model.d_x:
        raise DomainError(f"dataset d_x={dataset.d_x} but model expects {model.d_x}")
    rng = RngStream(config.seed, stream=1)
    opt = AdamState(model)
    history = []
    for epoch in range(config.epochs):
        perm = rng.generator.permutation(dataset.n)
        recon_sum = kld_sum = 0.0
        for start in range(0, dataset.n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            try:
                recon, kld = grad_step(model, opt, rng, dataset.samples[idx], config)
            except NumericalError as exc:
                exc.context.update(epoch=epoch, batch_start=start)
                raise
            recon_sum += recon * idx.size
            kld_sum += kld * idx.size
        history.append((recon_sum / dataset.n, kld_sum / dataset.n))
    norms = encode_norms(model, dataset)
    sigma = float(norms.std(ddof=1)) if norms.size > 1 else 0.0
    return TrainResult(model=model, history=history, z_bar=float(norms.mean()), radial_sigma=sigma)


def exact_elbo(model: VaeModel, dataset: Dataset):
    """Per-sample (recon, exact KLD) with the deterministic encoder mean.

    Swaps the training-time quadratic penalty for the exact divergence, which
    can only sharpen the likelihood bound since the quadratic never sits
    below the exact value. Tilted models only.
    """
    if not model.is_tilted:
        raise UnsupportedPriorError("exact_elbo needs a tilted-prior model")
    recons = np.empty(dataset.n)
    klds = np.empty(dataset.n)
    chunk = 1024
    for i in range(0, dataset.n, chunk):
        x = dataset.samples[i:i + chunk]
        mu, _ = encode(model, x)
        xhat = decode(model, mu)
        recons[i:i + x.shape[0]] = np.sum((xhat - x) ** 2, axis=1)
        norms = np.linalg.norm(mu, axis=1)
        klds[i:i + x.shape[0]] = [exact_kld(model.prior, float(r)) for r in norms]
    return recons, klds


def save_checkpoint(model: VaeModel, path, z_bar: float | None = None) -> None:
    """Versioned binary container (little-endian float64 tensors, row-major)
    plus a key-value manifest at <path>.manifest."""
    prior_tag = 1 if model.is_tilted else 0
    tau = model.prior.tau if model.is_tilted else 0.0
    gamma = model.prior.gamma if model.is_tilted else 0.0
    rate = model.prior.committed_rate if model.is_tilted else 0.0
    log_z = model.prior.log_z_tau if model.is_tilted else 0.0
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIB", _CHECKPOINT_VERSION, model.d_x, model.d_z, prior_tag))
        fh.write(struct.pack("<5d", tau, gamma, rate, log_z,
                             math.nan if z_bar is None else z_bar))
        for mlp in (model.encoder, model.decoder):
            fh.write(struct.pack("<I", len(mlp.weights)))
            for w, b in zip(mlp.weights, mlp.biases):
                fh.write(struct.pack("<II", *w.shape))
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    manifest = {
        "format_version": _CHECKPOINT_VERSION,
        "d_x": model.d_x,
        "d_z": model.d_z,
        "prior": "tilted" if model.is_tilted else "gaussian",
        "tau": repr(tau),
        "gamma": repr(gamma),
        "committed_rate": repr(rate),
        "z_bar": "" if z_bar is None else repr(z_bar),
    }
    with open(f"{path}.manifest", "w") as fh:
        for key in sorted(manifest):
            fh.write(f"{key} = {manifest[key]}\n")


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (model, z_bar or None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CHECKPOINT_MAGIC:
        raise DomainError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")

    def read_mlp(off):
        (n_layers,) = struct.unpack_from("<I", raw, off)
        off += 4
        weights, biases = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack_from("<II", raw, off)
            off += 8
            w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
            off += 8 * rows * cols
            b = np.frombuffer(raw, dtype="<f8", count=cols, offset=off)
            off += 8 * cols
            weights.append(w.copy())
            biases.append(b.copy())
        return MlpParams(weights, biases), off

    try:
        version, d_x, d_z, prior_tag = struct.unpack_from("<IIIB", raw, 4)
        if version != _CHECKPOINT_VERSION:
            raise DomainError(f"{path}: unsupported checkpoint version {version}")
        tau, gamma, rate, log_z, z_bar = struct.unpack_from("<5d", raw, 17)
        encoder, off = read_mlp(17 + 40)
        decoder, off = read_mlp(off)
    except struct.error as exc:
        raise DomainError(f"{path}: truncated checkpoint ({exc})") from None
    if prior_tag == 1:
        prior = TiltedPrior(tau=tau, d_z=d_z, log_z_tau=log_z, gamma=gamma, committed_rate=rate)
    else:
        prior = StandardGaussian()
    model = VaeModel(encoder, decoder, prior, d_x=d_x, d_z=d_z)
    return model, (None if math.isnan(z_bar) else z_bar)
