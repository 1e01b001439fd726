"""Training loop and evaluation for the fair-clustering autoencoder.

Each run starts with a reconstruction-only warmup, then alternates per
epoch: encode everything, refresh cluster centers with k-means, then sweep
seeded mini-batches minimizing reconstruction + alpha * clustering loss +
beta_fair * group leakage with Adam. Centers are constants within an epoch;
gradients reach the encoder only through the soft assignments.

Ground-truth labels never touch the loss path: the loop works on a
label-free view and only the per-epoch diagnostics (computed outside the
gradient path) look at labels when they exist.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import clustering, metrics, model, objectives
from .data import Dataset, minibatches

logger = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a run; two runs with equal configs and data match exactly."""

    k: int
    alpha: float = 0.04
    beta_fair: float = 0.20
    tau: float = 0.1
    latent_dim: int = 16
    layer_dims: tuple | None = None  # None: input-256-64-latent, resolved at fit
    warmup_epochs: int = 20
    max_epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    f_beta_weight: float = 1.0

    def __post_init__(self):
        if self.k < 2:
            raise TrainError("k must be >= 2")
        if self.latent_dim < 1:
            raise TrainError("latent_dim must be positive")
        if self.layer_dims is not None:
            dims = tuple(int(d) for d in self.layer_dims)
            if len(dims) < 2 or any(d < 1 for d in dims):
                raise TrainError("layer_dims needs >= 2 positive widths")
            if dims[-1] != self.latent_dim:
                raise TrainError("layer_dims must end at latent_dim")
            object.__setattr__(self, "layer_dims", dims)
        if not (0 <= self.warmup_epochs <= self.max_epochs):
            raise TrainError("need 0 <= warmup_epochs <= max_epochs")
        if self.max_epochs < 1:
            raise TrainError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.learning_rate <= 0 or self.tau <= 0 or self.adam_eps <= 0:
            raise TrainError("learning_rate, tau, and adam_eps must be positive")
        if self.alpha < 0 or self.beta_fair < 0 or self.f_beta_weight < 0:
            raise TrainError("loss and score weights must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise TrainError("adam momentum decays must lie in [0, 1)")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise TrainError(f"unknown config keys: {', '.join(unknown)}")
        if "k" not in raw:
            raise TrainError("config must set k")
        return cls(**raw)

    def resolve_layer_dims(self, input_dim: int) -> tuple:
        if self.layer_dims is None:
            return (input_dim, 256, 64, self.latent_dim)
        if self.layer_dims[0] != input_dim:
            raise TrainError(
                f"layer_dims starts at {self.layer_dims[0]} but the data has {input_dim} features"
            )
        return self.layer_dims


@dataclass
class EpochLog:
    epoch: int
    l_rec: float
    l_clu: float
    l_fair: float
    l_total: float
    mi_gc: float
    cmi_xcg: float
    acc: float | None = None
    nmi: float | None = None
    bal: float | None = None
    mnce: float | None = None
    f_beta: float | None = None


LOG_COLUMNS = ("epoch", "l_rec", "l_clu", "l_fair", "l_total", "mi_gc", "cmi_xcg",
               "acc", "nmi", "bal", "mnce", "f_beta")


def write_log_csv(logs, path):
    """One row per epoch, reals at 6 decimals, empty cells for absent metrics."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(LOG_COLUMNS) + "\n")
        for log in logs:
            cells = [str(log.epoch)]
            for name in LOG_COLUMNS[1:]:
                v = getattr(log, name)
                cells.append("" if v is None else f"{v:.6f}")
            fh.write(",".join(cells) + "\n")


@dataclass
class TrainerHooks:
    """Optional instrumentation callbacks; None disables a hook."""

    on_centers_refresh: object | None = None  # (epoch, ClusterCenters)
    on_batch: object | None = None            # (epoch, batch_index, {term: value})
    on_epoch: object | None = None            # (EpochLog)
    on_params: object | None = None           # (epoch, ModelParams), after updates


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, step: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if step < 1:
        raise TrainError("step counts from 1")
    new_params, new_m, new_v = {}, {}, {}
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for name, value in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainError(f"non-finite gradient for {name}")
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * (g * g)
        new_m[name], new_v[name] = m, v
        new_params[name] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return new_params, AdamState(m=new_m, v=new_v)


def _batch_graphs(x, groups, layer_dims, n_groups, warmup, centers, cfg):
    """Build the loss graphs for one batch, keyed by log column name."""
    nodes = model.param_input_nodes(layer_dims, n_groups)
    x_node = ad.input_node("x", x.shape)
    h = model.encoder_graph(x_node, nodes, layer_dims)
    rec = model.reconstruction_graph(x_node, h, nodes, layer_dims, groups)
    if warmup:
        return {"l_rec": rec, "l_total": rec}
    c = clustering.soft_assign_graph(h, centers, cfg.tau)
    clu = objectives.clustering_loss_graph(c, x.shape[0])
    fair = objectives.group_cluster_mi_graph(c, groups, n_groups)
    total = objectives.total_loss_graph(rec, clu, fair, cfg.alpha, cfg.beta_fair)
    return {"l_rec": rec, "l_clu": clu, "l_fair": fair, "l_total": total}


def _measure(params_flat, cfg, view, labels, layer_dims, epoch):
    """End-of-epoch diagnostics on the full dataset; never feeds gradients."""
    p = model.params_from_flat(params_flat, layer_dims, view.n_groups)
    h = model.encode(p, view.features)
    # measurement must not wobble between local minima, hence the restarts
    centers, _ = clustering.kmeans(h, cfg.k, seed=(cfg.seed, epoch, 0xD1A6), restarts=10)
    assign = clustering.soft_assign(h, centers, cfg.tau)
    mi = objectives.group_cluster_mi(assign, view.groups, view.n_groups)
    cmi = objectives.conditional_mi(assign, view.groups, view.n_groups)
    extras = {}
    if labels is not None:
        pred = assign.hard()
        extras["acc"] = metrics.accuracy(pred, labels)
        extras["nmi"] = metrics.nmi(pred, labels)
        extras["bal"] = metrics.balance(pred, view.groups)
        extras["mnce"] = metrics.mnce(pred, view.groups)
        extras["f_beta"] = metrics.f_beta(extras["nmi"], extras["mnce"], cfg.f_beta_weight)
    return mi, cmi, extras


def fit(config: TrainConfig, dataset: Dataset, hooks: TrainerHooks | None = None):
    """Train on the dataset; returns (ModelParams, list of EpochLog).

    Deterministic for a fixed config: data order, center seeding, and every
    update are derived from config.seed.
    """
    view = dataset.train_view()
    labels = dataset.labels
    layer_dims = config.resolve_layer_dims(view.features.shape[1])
    if view.n < config.k:
        raise TrainError(f"need at least k={config.k} samples, got {view.n}")
    hooks = hooks or TrainerHooks()

    params = model.flatten_params(model.init_params(layer_dims, view.n_groups, config.seed))
    param_names = set(params)
    state = AdamState()
    step = 0
    logs: list[EpochLog] = []
    logger.info(
        "training: n=%d dim=%d groups=%d k=%d layers=%s epochs=%d (warmup %d)",
        view.n, view.features.shape[1], view.n_groups, config.k,
        list(layer_dims), config.max_epochs, config.warmup_epochs,
    )

    for epoch in range(config.max_epochs):
        warmup = epoch < config.warmup_epochs
        centers = None
        if not warmup:
            p = model.params_from_flat(params, layer_dims, view.n_groups)
            h_all = model.encode(p, view.features)
            try:
                centers, _ = clustering.kmeans(h_all, config.k, seed=(config.seed, epoch, 0xC3))
            except clustering.ClusteringError as e:
                raise TrainError(f"epoch {epoch}: center refresh failed: {e}") from e
            if hooks.on_centers_refresh:
                hooks.on_centers_refresh(epoch, centers)

        sums = {"l_rec": 0.0, "l_clu": 0.0, "l_fair": 0.0, "l_total": 0.0}
        batches = minibatches(view, config.batch_size, (config.seed, epoch, 0xBA))
        for b, idx in enumerate(batches):
            x = view.features[idx]
            g = view.groups[idx]
            roots = _batch_graphs(x, g, layer_dims, view.n_groups, warmup, centers, config)
            ad.forward(roots["l_total"], {**params, "x": x})
            values = {name: float(node.value) for name, node in roots.items()}
            if not np.isfinite(values["l_total"]):
                raise TrainError(f"epoch {epoch}, batch {b}: non-finite loss {values}")
            grads = ad.backward(roots["l_total"])
            full_grads = {
                name: grads.get(name, np.zeros_like(value)) for name, value in params.items()
            }
            full_grads = {k: v for k, v in full_grads.items() if k in param_names}
            step += 1
            params, state = adam_step(
                params, full_grads, state, step, config.learning_rate,
                config.adam_beta1, config.adam_beta2, config.adam_eps,
            )
            for name in sums:
                sums[name] += values.get(name, 0.0)
            if hooks.on_batch:
                hooks.on_batch(epoch, b, values)

        nb = len(batches)
        mi, cmi, extras = _measure(params, config, view, labels, layer_dims, epoch)
        log = EpochLog(
            epoch=epoch,
            l_rec=sums["l_rec"] / nb,
            l_clu=sums["l_clu"] / nb,
            l_fair=sums["l_fair"] / nb,
            l_total=sums["l_total"] / nb,
            mi_gc=mi,
            cmi_xcg=cmi,
            **extras,
        )
        logs.append(log)
        if hooks.on_epoch:
            hooks.on_epoch(log)
        if hooks.on_params:
            # params_from_flat shares storage, so this costs nothing extra
            hooks.on_params(epoch, model.params_from_flat(params, layer_dims, view.n_groups))
        if epoch % 20 == 0 or epoch == config.max_epochs - 1:
            logger.info(
                "epoch %d: l_total=%.6f l_rec=%.6f mi_gc=%.6f", epoch, log.l_total, log.l_rec, log.mi_gc
            )

    return model.params_from_flat(params, layer_dims, view.n_groups), logs


def evaluate(params: model.ModelParams, dataset: Dataset, config: TrainConfig) -> metrics.MetricsReport:
    """Cluster the dataset with the trained encoder and score the partition.

    Encodes everything, fits fresh centers (seeded from the config), takes
    the argmax of the soft assignment rows, and assembles the full report.
    Deterministic: two calls yield identical reports.
    """
    h = model.encode(params, dataset.features)
    if np.all(np.ptp(h, axis=0) == 0.0):
        # degenerate encoder (e.g. all-zero weights): jitter so clustering can run
        logger.warning("evaluate: all latent rows identical; applying seeded 1e-12 jitter")
        h = h + np.random.default_rng(config.seed).uniform(0.0, 1e-12, size=h.shape)
    centers, _ = clustering.kmeans(h, config.k, seed=config.seed, restarts=10)
    assign = clustering.soft_assign(h, centers, config.tau)
    return metrics.full_report(assign.hard(), dataset.groups, dataset.labels, config.f_beta_weight)
