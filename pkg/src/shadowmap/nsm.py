"""Neural shadow-mapping: encoders, diagonal cross-prediction, decoders.

For every ordered pair of variables ``(i, j)`` the encoder of variable ``i``
embeds manifold ``i`` at the neighbour indices found on manifold ``j``
(mean-pooled over the ``k`` neighbours), giving ``E[i, j]``. The diagonal
block ``A[i, j]`` predicts the cross-indexed embedding from the own-index one::

    E_hat[i, j] = A[i, j] * E[i, i]        (i != j)

and the decoder of ``i`` reconstructs the pooled neighbourhood of manifold
``i`` at ``j``'s indices from ``E_hat[i, j]``. Manifold ``i`` gathered at
``j``'s neighbours is tight only when ``j``'s shadow carries ``i``'s
history, i.e. when ``i`` drives ``j``; ``A[i, j]`` therefore scores the
edge ``i -> j``.

With ``standardize`` on, every embedding of encoder ``i`` is shifted and
scaled per dimension by the batch mean and standard deviation of
``E[i, i]`` before the cross prediction. This removes the trivial way of
shrinking the prediction loss by shrinking the embeddings, and makes
``A[i, j]`` a regression coefficient between standardised embeddings.

With ``detach_prediction`` on (the default), the cross-prediction error
trains ``A`` only and the reconstruction error trains everything. If the
prediction error also reached the encoders, they could lower it by picking
features that average out over another variable's neighbours, which drives
every ``A`` towards zero exactly where the cross-neighbourhood signal is
weak. The loss value is the same either way; only the gradient routing differs.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, neural, shadow

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 20
    iterations: int = 20_000
    lr: float = 3e-4
    embed_dim: int = 6
    p: int = 10
    k: int = 10
    tau: int = 1
    theiler: int | None = None  # None -> p
    generations_per_run: int = 10
    length: int = 1000
    burn_in: int = 100
    hidden: tuple = (32, 16)
    encoders_per_pair: bool = False
    a_init: float = 0.5
    standardize: bool = True
    norm_eps: float = 1e-5
    detach_prediction: bool = True

    PAPER_ITERATIONS = 300_000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("batch_size", "embed_dim", "p", "k", "tau", "generations_per_run", "length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.encoders_per_pair and self.detach_prediction:
            # the cross-index encoders only feed prediction targets and would never train
            raise ValueError("encoders_per_pair requires detach_prediction=False")

    @property
    def theiler_radius(self) -> int:
        return self.p if self.theiler is None else self.theiler

    def encoder_dims(self) -> list[int]:
        return [self.p, *self.hidden, self.embed_dim]

    def decoder_dims(self) -> list[int]:
        return [self.embed_dim, *reversed(self.hidden), self.p]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class NsmModel:
    n_vars: int
    config: TrainConfig
    theta: np.ndarray
    encoders: list  # encoders[i], or encoders[i][j] with encoders_per_pair
    decoders: list
    A: np.ndarray  # (n, n, d); A[i, i] is unused
    offsets: np.ndarray = field(repr=False)  # (n, 2) flat offsets of encoder/decoder i
    a_offset: int = 0

    def encoder(self, i: int, j: int) -> neural.DenseNet:
        return self.encoders[i][j] if self.config.encoders_per_pair else self.encoders[i]

    def named_tensors(self) -> dict:
        out = {}
        for i in range(self.n_vars):
            encs = self.encoders[i] if self.config.encoders_per_pair else [self.encoders[i]]
            for e, net in enumerate(encs):
                for li, (W, b) in enumerate(net.layers):
                    out[f"enc{i}.{e}.W{li}"] = W
                    out[f"enc{i}.{e}.b{li}"] = b
            for li, (W, b) in enumerate(self.decoders[i].layers):
                out[f"dec{i}.W{li}"] = W
                out[f"dec{i}.b{li}"] = b
        out["A"] = self.A
        return out

    def save(self, path) -> None:
        neural.save_checkpoint(path, self.named_tensors())

    def load_parameters(self, path) -> None:
        for name, arr in neural.load_checkpoint(path).items():
            self.named_tensors()[name][...] = arr


def _build(n_vars: int, config: TrainConfig, theta: np.ndarray | None, rng) -> NsmModel:
    enc_dims, dec_dims = config.encoder_dims(), config.decoder_dims()
    n_enc = n_vars if config.encoders_per_pair else 1
    enc_size, dec_size = neural.param_count(enc_dims), neural.param_count(dec_dims)
    d = config.embed_dim
    total = n_vars * (n_enc * enc_size + dec_size) + n_vars * n_vars * d
    fresh = theta is None
    if fresh:
        theta = np.empty(total)
    elif theta.size != total:
        raise ValueError("parameter vector does not match configuration")

    def net(dims, start, size):
        buf = theta[start:start + size]
        return neural.init_dense(dims, rng, buf) if fresh else neural.view_dense(dims, buf)

    encoders, decoders, offsets, pos = [], [], np.zeros((n_vars, 2), dtype=np.int64), 0
    for i in range(n_vars):
        offsets[i, 0] = pos
        encs = []
        for _ in range(n_enc):
            encs.append(net(enc_dims, pos, enc_size))
            pos += enc_size
        encoders.append(encs if config.encoders_per_pair else encs[0])
        offsets[i, 1] = pos
        decoders.append(net(dec_dims, pos, dec_size))
        pos += dec_size
    A = theta[pos:].reshape(n_vars, n_vars, d)
    if fresh:
        A[...] = config.a_init
        A[np.arange(n_vars), np.arange(n_vars)] = 0.0
    return NsmModel(n_vars, config, theta, encoders, decoders, A, offsets, pos)


def init_model(n_vars: int, config: TrainConfig, rng) -> NsmModel:
    if n_vars < 2:
        raise ValueError("need at least two variables")
    return _build(n_vars, config, None, np.random.default_rng(rng))


def model_view(n_vars: int, config: TrainConfig, theta: np.ndarray) -> NsmModel:
    """Model whose parameters are views into an existing flat vector."""
    return _build(n_vars, config, theta, None)


# --- forward pieces --------------------------------------------------------------

def _check_batch(model: NsmModel, batch: shadow.NeighborhoodBatch) -> None:
    if batch.n_vars != model.n_vars:
        raise ValueError(f"batch has {batch.n_vars} variables, model has {model.n_vars}")
    t = batch.tensors[0, 0]
    if t.shape[1] != model.config.p:
        raise ValueError(f"neighbourhood width {t.shape[1]} does not match p={model.config.p}")


def encode_batch(model: NsmModel, batch: shadow.NeighborhoodBatch) -> dict:
    """Mean-pooled encodings ``E[(i, j)]`` of shape ``(batch, d)``."""
    _check_batch(model, batch)
    out = {}
    for (i, j), t in batch.tensors.items():
        bs, p, k = t.shape
        enc, _ = neural.forward(model.encoder(i, j), t.transpose(0, 2, 1).reshape(-1, p))
        out[i, j] = enc.reshape(bs, k, -1).mean(axis=1)
    return out


def standardize(model: NsmModel, embeddings: dict) -> dict:
    """Shift and scale ``E[i, j]`` by the per-dimension batch statistics of ``E[i, i]``."""
    if not model.config.standardize:
        return dict(embeddings)
    out = {}
    for i in range(model.n_vars):
        mu = embeddings[i, i].mean(axis=0)
        sd = np.sqrt(embeddings[i, i].var(axis=0) + model.config.norm_eps)
        for j in range(model.n_vars):
            out[i, j] = (embeddings[i, j] - mu) / sd
    return out


def _standardize_rows(E: np.ndarray, i: int, eps: float):
    """``E`` is ``(n, batch, d)``; statistics come from ``E[i]``."""
    mu = E[i].mean(axis=0)
    sd = np.sqrt(E[i].var(axis=0) + eps)
    return (E - mu) / sd, sd


def _standardize_backward(gZ: np.ndarray, Z: np.ndarray, sd: np.ndarray, i: int) -> np.ndarray:
    bs = Z.shape[1]
    g_mu = -gZ.sum(axis=(0, 1)) / sd
    g_sd = -(gZ * Z).sum(axis=(0, 1)) / sd
    gE = gZ / sd
    gE[i] += (g_mu + g_sd * Z[i]) / bs
    return gE


def cross_predict(model: NsmModel, embeddings: dict) -> dict:
    n = model.n_vars
    return {(i, j): model.A[i, j] * embeddings[i, i] for i in range(n) for j in range(n) if i != j}


def loss_and_grad(model: NsmModel, batch: shadow.NeighborhoodBatch):
    """Total loss and its gradient as a flat vector aligned with ``model.theta``.

    The loss sums, over ordered pairs ``i != j``, the mean squared error of
    the cross prediction and of the decoder's reconstruction of the pooled
    neighbourhood.
    """
    _check_batch(model, batch)
    n, cfg = model.n_vars, model.config
    grad = np.zeros_like(model.theta)
    gmodel = model_view(n, cfg, grad)
    total = 0.0
    for i in range(n):
        X = batch.stacked(i)  # (n, bs, k, p)
        _, bs, k, p = X.shape
        pooled = X.mean(axis=2)
        if cfg.encoders_per_pair:
            caches, E = [], []
            for j in range(n):
                o, c = neural.forward(model.encoders[i][j], X[j].reshape(-1, p))
                caches.append(c)
                E.append(o.reshape(bs, k, -1).mean(axis=1))
            E = np.stack(E)
        else:
            o, cache = neural.forward(model.encoders[i], X.reshape(-1, p))
            E = o.reshape(n, bs, k, -1).mean(axis=2)
        if cfg.standardize:
            E, sd = _standardize_rows(E, i, cfg.norm_eps)
        others = [j for j in range(n) if j != i]
        a = model.A[i, others][:, None, :]  # (n-1, 1, d)
        e_hat = a * E[i][None]
        pred_loss, g_hat = 0.0, np.empty_like(e_hat)
        gE = np.zeros_like(E)
        for jj, j in enumerate(others):
            l, g = neural.l2_loss(e_hat[jj], E[j])
            pred_loss += l
            g_hat[jj] = g
            if not cfg.detach_prediction:
                gE[j] -= g
        d = E.shape[-1]
        recon, dcache = neural.forward(model.decoders[i], e_hat.reshape(-1, d))
        rec_loss, g_rec = 0.0, np.empty_like(recon)
        target = pooled[others].reshape(-1, p)
        for jj in range(len(others)):
            rows = slice(jj * bs, (jj + 1) * bs)
            l, g = neural.l2_loss(recon[rows], target[rows])
            rec_loss += l
            g_rec[rows] = g
        dgrads, g_in = neural.backward(model.decoders[i], dcache, g_rec)
        for (gW, gb), (W, b) in zip(dgrads, gmodel.decoders[i].layers):
            W += gW
            b += gb
        g_dec = g_in.reshape(g_hat.shape)
        gmodel.A[i, others] += ((g_hat + g_dec) * E[i][None]).sum(axis=1)
        # with detach_prediction the encoder only sees the reconstruction path
        g_enc = g_dec if cfg.detach_prediction else g_hat + g_dec
        gE[i] += (g_enc * a).sum(axis=0)
        if cfg.standardize:
            gE = _standardize_backward(gE, E, sd, i)
        if cfg.encoders_per_pair:
            for j in range(n):
                g_out = np.repeat(gE[j][:, None, :] / k, k, axis=1).reshape(-1, d)
                egrads, _ = neural.backward(model.encoders[i][j], caches[j], g_out)
                for (gW, gb), (W, b) in zip(egrads, gmodel.encoders[i][j].layers):
                    W += gW
                    b += gb
        else:
            g_out = np.broadcast_to(gE[:, :, None, :] / k, (n, bs, k, d)).reshape(-1, d)
            egrads, _ = neural.backward(model.encoders[i], cache, g_out)
            for (gW, gb), (W, b) in zip(egrads, gmodel.encoders[i].layers):
                W += gW
                b += gb
        total += pred_loss + rec_loss
    return total, grad


def loss_terms(model: NsmModel, batch: shadow.NeighborhoodBatch) -> tuple[float, float]:
    """``(prediction, reconstruction)`` recomputed through the public forward pieces."""
    E = standardize(model, encode_batch(model, batch))
    E_hat = cross_predict(model, E)
    pred = rec = 0.0
    for (i, j), e in E_hat.items():
        pred += neural.l2_loss(e, E[i, j])[0]
        recon, _ = neural.forward(model.decoders[i], e)
        rec += neural.l2_loss(recon, batch.tensors[i, j].mean(axis=2))[0]
    return pred, rec


def total_loss(model: NsmModel, batch: shadow.NeighborhoodBatch) -> float:
    """Loss recomputed from scratch through the public forward pieces."""
    return sum(loss_terms(model, batch))


def new_adam(model: NsmModel) -> neural.AdamState:
    return neural.AdamState.for_params(model.theta, lr=model.config.lr)


def training_step(model: NsmModel, batch: shadow.NeighborhoodBatch, adam: neural.AdamState) -> float:
    """One Adam step on every parameter; returns the loss before the update."""
    loss, grad = loss_and_grad(model, batch)
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite loss at step {adam.t}")
    neural.adam_step(model.theta, grad, adam)
    return loss


def extract_betas(model: NsmModel) -> dict:
    """``{(source, target): beta}`` with beta the mean diagonal of ``A[source, target]``.

    The mean is signed: coefficients of non-causal pairs scatter around zero,
    and folding that scatter with an absolute value would turn differences in
    noise level between real and surrogate data into apparent effects.
    """
    n = model.n_vars
    return {(i, j): float(model.A[i, j].mean()) for i in range(n) for j in range(n) if i != j}


# --- runs --------------------------------------------------------------------------

@dataclass
class EdgeEstimate:
    betas: dict  # (source, target) -> beta
    seed: object = None
    final_loss: float = float("nan")


@dataclass
class BetaDistribution:
    names: tuple
    real: dict  # (source, target) -> list of betas
    surrogate: dict

    def edges(self):
        return sorted(self.real)

    def to_dict(self) -> dict:
        return {"edges": [
            {"source": self.names[s], "target": self.names[t],
             "beta_real": list(self.real[s, t]), "beta_surrogate": list(self.surrogate.get((s, t), []))}
            for s, t in self.edges()]}


def prepare_generations(source, config: TrainConfig, rng):
    """Draw ``generations_per_run`` datasets and build manifolds and neighbour tables."""
    mans, tabs = [], []
    for _ in range(config.generations_per_run):
        values = np.asarray(source(rng), dtype=float)
        if values.ndim != 2 or values.shape[0] != config.length:
            raise ValueError(f"data source returned shape {values.shape}, expected ({config.length}, n)")
        ms = [shadow.build_shadow(values[:, v], config.p, config.tau, var_id=v) for v in range(values.shape[1])]
        mans.append(np.stack([m.points for m in ms]))
        tabs.append(np.stack([shadow.knn_table(m, config.k, config.theiler_radius) for m in ms]))
    return np.ascontiguousarray(np.stack(mans)), np.ascontiguousarray(np.stack(tabs).astype(np.int64))


def train_run(config: TrainConfig, source, rng, use_compiled: bool | None = None):
    """Train one model on fresh generations from ``source(rng) -> (length, n)``.

    Returns ``(model, EdgeEstimate, losses)``.
    """
    seed = rng if isinstance(rng, (int, tuple, list)) else None
    rng = np.random.default_rng(rng)
    man, tab = prepare_generations(source, config, rng)
    G, n, N, _ = man.shape
    model = init_model(n, config, rng)
    gen_idx = rng.integers(0, G, size=config.iterations).astype(np.int64)
    anchors = rng.integers(0, N, size=(config.iterations, config.batch_size)).astype(np.int64)
    adam = new_adam(model)
    losses = np.zeros(config.iterations)
    if use_compiled is None:
        use_compiled = kernels.HAVE_COMPILED
    if config.iterations:
        impl = kernels.compiled_train_loop() if use_compiled else None
        if impl is None or config.encoders_per_pair or len(config.hidden) != 2:
            impl = kernels.fallback_train_loop
        try:
            adam.t = impl(man, tab, gen_idx, anchors, model.theta, adam.m[0], adam.v[0], adam.t,
                          model.offsets, model.a_offset, config.p, config.hidden[0], config.hidden[1],
                          config.embed_dim, config, adam.lr, adam.beta1, adam.beta2, adam.eps, losses)
        except FloatingPointError as exc:
            raise TrainingAborted(str(exc)) from exc
    betas = extract_betas(model)
    return model, EdgeEstimate(betas, seed, float(losses[-1]) if losses.size else float("nan")), losses
