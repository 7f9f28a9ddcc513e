"""Dirichlet-latent variational calibrator.

The encoder maps (features, one-hot classifier prediction) to the posterior
Dirichlet concentrations alpha_hat; the decoder maps (features, a simplex
sample of the true label) to per-class Bernoulli probabilities that
reconstruct the prediction.  Training maximises

    sum_k [t_k ln r_k + (1 - t_k) ln(1 - r_k)] - KL(MultiGamma(alpha_hat) || MultiGamma(alpha_x))

with the latent drawn through the approximate gamma inverse CDF so gradients
reach alpha_hat.  After training, the mode of each posterior gives one row of
the calibration matrix H(x), and calibrated probabilities are the mixture
sum_k H_k(x) p(pred = k | x).

Only features and classifier outputs are consumed; the API takes no labels.
"""

from dataclasses import asdict, dataclass, field
import json
import struct

import numpy as np

from . import kernels
from .data import PredictionSet
from .errors import FormatError, PreconditionError, ShapeError, TrainingError
from .mathcore import make_rng, softmax, uniform_open
from .nn import Adam, Mlp, minibatches, one_hot, sigmoid, softplus
from .prior import PriorConfig, build_prior

NPC_MAGIC = b"NPCN"
NPC_VERSION = 1


@dataclass(frozen=True)
class NpcConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    mc_samples: int = 1
    alpha_floor: float = 1e-4
    mode_eps: float = 1e-3
    hidden: tuple = (128, 128)
    # reconstruct the full probability row instead of its one-hot argmax
    soft_targets: bool = False
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.mc_samples < 1:
            raise PreconditionError("mc_samples must be at least 1")
        if not self.alpha_floor > 0:
            raise PreconditionError("alpha_floor must be positive")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise PreconditionError("epochs, batch_size and learning_rate must be positive")


class NpcModel:
    def __init__(self, encoder, decoder, n_features, n_classes, alpha_floor=1e-4):
        self.encoder = encoder
        self.decoder = decoder
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.alpha_floor = float(alpha_floor)
        width = self.n_features + self.n_classes
        if encoder.input_dim != width or decoder.input_dim != width:
            raise ShapeError("encoder/decoder input width must be n_features + n_classes")
        if encoder.output_dim != n_classes or decoder.output_dim != n_classes:
            raise ShapeError("encoder/decoder output width must be n_classes")

    @classmethod
    def initialise(cls, n_features, n_classes, hidden=(128, 128), rng=None, alpha_floor=1e-4):
        dims = [n_features + n_classes, *hidden, n_classes]
        return cls(Mlp(dims, rng=rng), Mlp(dims, rng=rng), n_features, n_classes, alpha_floor)

    @property
    def params(self):
        return self.encoder.params + self.decoder.params

    def copy(self):
        return NpcModel(
            self.encoder.copy(), self.decoder.copy(), self.n_features, self.n_classes, self.alpha_floor
        )

    # ------------------------------------------------------------------ I/O

    def to_bytes(self, config=None):
        echo = json.dumps(
            {
                "n_features": self.n_features,
                "n_classes": self.n_classes,
                "alpha_floor": self.alpha_floor,
                "config": config,
            },
            sort_keys=True,
        ).encode("utf-8")
        return b"".join(
            [
                NPC_MAGIC,
                struct.pack("<II", NPC_VERSION, len(echo)),
                echo,
                self.encoder.to_bytes(),
                self.decoder.to_bytes(),
            ]
        )

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != NPC_MAGIC:
            raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {NPC_MAGIC!r}", 0)
        if len(buf) < 12:
            raise FormatError("truncated payload while reading header", len(buf))
        version, echo_len = struct.unpack("<II", buf[4:12])
        if version != NPC_VERSION:
            raise FormatError(f"unsupported version {version}", 4)
        if 12 + echo_len > len(buf):
            raise FormatError("truncated payload while reading config echo", 12)
        meta = json.loads(buf[12 : 12 + echo_len].decode("utf-8"))
        encoder, pos = Mlp.from_bytes(buf, 12 + echo_len)
        decoder, pos = Mlp.from_bytes(buf, pos)
        if pos != len(buf):
            raise FormatError("trailing bytes after model", pos)
        model = cls(encoder, decoder, meta["n_features"], meta["n_classes"], meta["alpha_floor"])
        return model, meta.get("config")


def save_npc(model, path, config=None):
    with open(path, "wb") as fh:
        fh.write(model.to_bytes(config))


def load_npc(path):
    with open(path, "rb") as fh:
        return NpcModel.from_bytes(fh.read())[0]


def config_to_dict(cfg):
    out = asdict(cfg)
    out["hidden"] = list(cfg.hidden)
    return out


# --------------------------------------------------------------------------
# forward / backward


def _encode(model, x, pred_onehot):
    z = model.encoder.forward(np.hstack([x, pred_onehot]))
    logits, cache = z
    sp = softplus(logits)
    alpha_hat = np.maximum(sp, model.alpha_floor)
    return alpha_hat, (logits, sp, cache)


def posterior_alpha(model, features, pred_class):
    """Posterior concentrations for inputs ``features`` with prediction ``pred_class``.

    ``pred_class`` is an int (same class for every row) or one index per row.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeError(f"expected features of width {model.n_features}")
    labels = np.broadcast_to(np.asarray(pred_class), (x.shape[0],))
    alpha_hat, _ = _encode(model, x, one_hot(labels, model.n_classes))
    return alpha_hat


def _forward(model, x, pred_onehot, targets, prior_alpha, u):
    alpha_hat, enc = _encode(model, x, pred_onehot)
    lg_hat = kernels.lgamma_kernel(alpha_hat)
    psi_hat = kernels.digamma_kernel(alpha_hat)
    log_z = (np.log(u) + np.log(alpha_hat) + lg_hat) / alpha_hat
    y_sample = softmax(log_z, axis=1)
    dec_logits, dec_cache = model.decoder.forward(np.hstack([x, y_sample]))
    # t ln r + (1 - t) ln(1 - r) with r = sigmoid(z) equals t z - softplus(z)
    recon = (targets * dec_logits - softplus(dec_logits)).sum(axis=1)
    kl = (
        kernels.lgamma_kernel(prior_alpha)
        - lg_hat
        + (alpha_hat - prior_alpha) * psi_hat
    ).sum(axis=1)
    state = (alpha_hat, enc, psi_hat, log_z, y_sample, dec_logits, dec_cache)
    return recon, kl, state


def _prepare(model, features, preds_probs, prior_alpha, u, soft_targets):
    x = np.asarray(features, dtype=np.float64)
    probs = np.asarray(preds_probs, dtype=np.float64)
    prior_alpha = np.asarray(prior_alpha, dtype=np.float64)
    if x.shape[0] != probs.shape[0] or prior_alpha.shape != probs.shape:
        raise ShapeError("features, predictions and prior must align")
    if probs.shape[1] != model.n_classes or x.shape[1] != model.n_features:
        raise ShapeError("inputs do not match the model dimensions")
    hard = one_hot(np.argmax(probs, axis=1), model.n_classes)
    targets = probs if soft_targets else hard
    reps = u.shape[0] // x.shape[0]
    if reps * x.shape[0] != u.shape[0] or u.shape[1] != model.n_classes:
        raise ShapeError("noise must have shape (mc_samples * n, c)")
    if reps > 1:
        x, hard, targets, prior_alpha = (np.tile(a, (reps, 1)) for a in (x, hard, targets, prior_alpha))
    return x, hard, targets, prior_alpha


def elbo_terms(model, features, preds_probs, prior_alpha, u, soft_targets=False):
    """Per-sample (reconstruction, KL) for fixed uniform noise ``u``."""
    x, hard, targets, prior_alpha = _prepare(model, features, preds_probs, prior_alpha, u, soft_targets)
    recon, kl, _ = _forward(model, x, hard, targets, prior_alpha, u)
    return recon, kl


def elbo(model, features, preds_probs, prior_alpha, rng=None, u=None, mc_samples=1, soft_targets=False):
    """Batch-mean ELBO.  Pass ``u`` to freeze the reparameterisation noise."""
    if u is None:
        if rng is None:
            raise PreconditionError("need either rng or fixed noise u")
        u = uniform_open(rng, (mc_samples * np.shape(features)[0], model.n_classes))
    recon, kl = elbo_terms(model, features, preds_probs, prior_alpha, u, soft_targets)
    return float(np.mean(recon - kl))


def elbo_and_grads(model, features, preds_probs, prior_alpha, u, soft_targets=False):
    """Mean ELBO and the gradient of the *negative* mean ELBO w.r.t. ``model.params``."""
    x, hard, targets, prior_alpha = _prepare(model, features, preds_probs, prior_alpha, u, soft_targets)
    recon, kl, state = _forward(model, x, hard, targets, prior_alpha, u)
    alpha_hat, (enc_logits, enc_sp, enc_cache), psi_hat, log_z, y_sample, dec_logits, dec_cache = state
    b = x.shape[0]
    c = model.n_classes

    g_dec = (sigmoid(dec_logits) - targets) / b
    dec_grads, g_dec_in = model.decoder.backward(dec_cache, g_dec)
    g_y = g_dec_in[:, -c:]
    g_logz = y_sample * (g_y - (g_y * y_sample).sum(axis=1, keepdims=True))
    g_alpha = g_logz * (1.0 / alpha_hat + psi_hat - log_z) / alpha_hat
    g_alpha += (alpha_hat - prior_alpha) * kernels.trigamma_kernel(alpha_hat) / b
    g_enc = g_alpha * sigmoid(enc_logits) * (enc_sp > model.alpha_floor)
    enc_grads, _ = model.encoder.backward(enc_cache, g_enc)
    return float(np.mean(recon - kl)), enc_grads + dec_grads


# --------------------------------------------------------------------------
# training and inference


def train_npc(features, preds, prior_alpha, cfg=NpcConfig(), history=None):
    """Fit encoder and decoder by stochastic ELBO ascent.

    ``prior_alpha`` is the n x c prior (see :func:`npcal.prior.build_prior`),
    computed once and reused every epoch.  If ``history`` is a list the mean
    training ELBO of every epoch is appended to it.
    """
    x = np.asarray(features, dtype=np.float64)
    probs = preds.probs.astype(np.float64) if isinstance(preds, PredictionSet) else np.asarray(preds)
    prior_alpha = np.asarray(prior_alpha, dtype=np.float64)
    n, c = probs.shape
    rng = make_rng(cfg.seed)
    model = NpcModel.initialise(x.shape[1], c, cfg.hidden, rng, cfg.alpha_floor)
    opt = Adam(model.params, lr=cfg.learning_rate)
    batch = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in minibatches(n, batch, rng):
            u = uniform_open(rng, (cfg.mc_samples * idx.size, c))
            value, grads = elbo_and_grads(model, x[idx], probs[idx], prior_alpha[idx], u, cfg.soft_targets)
            if not np.isfinite(value):
                raise TrainingError("ELBO is not finite", epoch)
            opt.step(model.params, grads)
            total += value * idx.size
        if history is not None:
            history.append(total / n)
    return model


def posterior_mode(alpha, eps=1e-3):
    """Mode of Dir(alpha), row-wise, after clamping every component to >= 1 + eps."""
    a = np.maximum(np.asarray(alpha, dtype=np.float64), 1.0 + eps)
    a = a - 1.0
    return a / a.sum(axis=-1, keepdims=True)


def calibration_matrices(model, features, eps=1e-3):
    """H(x) for every row: array (n, c, c) with H[i, k, j] = p(y = j | pred = k, x_i)."""
    x = np.asarray(features, dtype=np.float64)
    h = np.empty((x.shape[0], model.n_classes, model.n_classes))
    for k in range(model.n_classes):
        h[:, k, :] = posterior_mode(posterior_alpha(model, x, k), eps)
    return h


def mix(h, probs):
    """p(y | x) = sum_k p(pred = k | x) H_k(x)."""
    out = np.einsum("nk,nkj->nj", np.asarray(probs, dtype=np.float64), h)
    return out / out.sum(axis=1, keepdims=True)


def calibrate(model, features, preds, eps=1e-3):
    """Calibrated :class:`PredictionSet`; embeddings are carried over unchanged."""
    if preds.n_classes != model.n_classes:
        raise ShapeError("prediction width does not match the model")
    if np.shape(features)[0] != preds.n:
        raise ShapeError("features and predictions have different lengths")
    h = calibration_matrices(model, features, eps)
    return PredictionSet(mix(h, preds.probs), preds.embeddings)


def fit_calibrator(features, preds, cfg=NpcConfig(), history=None):
    """Prior construction followed by training; returns (model, prior assignment)."""
    prior = build_prior(features, preds, cfg.prior)
    model = train_npc(features, preds, prior.alpha, cfg, history)
    return model, prior


def iterate_npc(features, preds, cfg=NpcConfig(), n_iters=1, eval_features=None, eval_preds=None):
    """Re-apply NPC, each round treating the previous calibrated output as the classifier.

    Returns the calibrated evaluation predictions of every round (the training
    inputs themselves when no evaluation set is given).
    """
    if n_iters < 1:
        raise PreconditionError("n_iters must be at least 1")
    if eval_features is None:
        eval_features, eval_preds = features, preds
    stages = []
    for _ in range(n_iters):
        model, _ = fit_calibrator(features, preds, cfg)
        next_train = calibrate(model, features, preds)
        eval_preds = calibrate(model, eval_features, eval_preds)
        preds = next_train
        stages.append(eval_preds)
    return stages
