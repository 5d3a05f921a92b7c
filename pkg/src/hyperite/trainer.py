"""Model assembly, the weighted training objective and the full-graph training loop."""

import csv
import io
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .encoder import HgcnConfig, encode
from .heads import (
    ConfigurationError,
    OutcomeConfig,
    TransportProblem,
    factual_loss,
    outcome_forward,
    pair_probability,
    regressor,
    relation_loss,
    sample_pairs,
    sinkhorn_distance,
    balancing_term,
)

log = logging.getLogger(__name__)

VARIANTS = ("full", "no-hb", "no-ta", "features-only")
TRACE_COLUMNS = ("epoch", "loss_y", "loss_t", "wass", "l2", "total", "val_mse")


@dataclass
class SinkhornConfig:
    epsilon_scale: float = 0.1
    max_iters: int = 100
    tol: float = 1e-9


@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 300
    patience: int = 30
    seed: int = 0
    curvature: float = 1e-2
    layers: int = 1
    hidden_dim: int = 50
    head_layers: int = 1
    head_hidden: int = 50
    alpha: float = 1e-1
    beta: float = 1e-4
    lam: float = 1e-3
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    variant: str = "full"

    def __post_init__(self):
        if isinstance(self.sinkhorn, dict):
            self.sinkhorn = SinkhornConfig(**self.sinkhorn)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("alpha", "beta", "lam", "curvature"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and non-negative, got {v}")
        if self.lr <= 0 or self.epochs < 1 or self.patience < 1:
            raise ConfigurationError("lr, epochs and patience must be positive")

    def effective(self):
        """The configuration actually trained once the ablation variant is applied."""
        if self.variant == "no-hb":
            return replace(self, curvature=0.0)
        if self.variant == "no-ta":
            return replace(self, alpha=0.0)
        if self.variant == "features-only":
            return replace(self, curvature=0.0, alpha=0.0)
        return self

    @property
    def uses_graph(self):
        return self.variant != "features-only"

    @property
    def uses_relation(self):
        e = self.effective()
        return e.alpha > 0

    def hgcn(self, in_dim):
        return HgcnConfig(in_dim=in_dim, hidden_dim=self.hidden_dim, layers=self.layers, c=self.effective().curvature)

    def outcome(self):
        return OutcomeConfig(in_dim=self.hidden_dim, hidden=self.head_hidden, layers=self.head_layers)

    def to_dict(self):
        return asdict(self)


def param_shapes(cfg, in_dim):
    """Parameter shapes in initialisation order; the relation head comes last."""
    shapes = dict(cfg.hgcn(in_dim).param_shapes())
    oc = cfg.outcome()
    shapes.update(oc.param_shapes(1))
    shapes.update(oc.param_shapes(0))
    if cfg.uses_relation:
        shapes["rel.W"] = (1, 2 * cfg.hidden_dim)
        shapes["rel.b"] = (1,)
    return shapes


def build_params(cfg, in_dim):
    return dc.init_params(param_shapes(cfg, in_dim), cfg.seed)


def model_graph(cfg, graph):
    return graph if cfg.uses_graph else graph.without_edges()


def representation(params, cfg, X, graph):
    """Tangent representation ``h^E`` of every node (a Tensor when ``params`` is a ParamStore)."""
    _, h = encode(X, model_graph(cfg, graph), cfg.hgcn(X.shape[1]), params)
    return h


def solve_transport(h_treated, h_control, cfg, warm=None, epsilon=None):
    s = cfg.sinkhorn
    prob = TransportProblem(
        h_treated, h_control, epsilon=epsilon, epsilon_scale=s.epsilon_scale, max_iters=s.max_iters, tol=s.tol,
        potentials=warm,
    )
    sinkhorn_distance(prob)
    return prob


@dataclass
class LossParts:
    loss_y: object
    loss_t: object
    wass: object
    l2: object
    total: object
    h: object
    y_hat: object
    transport: TransportProblem = None

    def values(self):
        return {k: float(getattr(self, k).data) if isinstance(getattr(self, k), dc.Tensor) else float(getattr(self, k))
                for k in ("loss_y", "loss_t", "wass", "l2", "total")}


def total_loss(loss_y, loss_t, wass, l2, alpha, beta, lam):
    """``L_y + alpha L_t + beta D + lam |theta|^2``."""
    parts = (loss_y, loss_t, wass, l2)
    for p in parts:
        v = p.data if isinstance(p, dc.Tensor) else p
        if not np.all(np.isfinite(v)):
            raise dc.GradientError("non-finite loss component")
    return loss_y + alpha * loss_t + beta * wass + lam * l2


def _values(x):
    return x.data if isinstance(x, dc.Tensor) else x


def loss_parts(params, cfg, ds, train_idx, pairs=None, transport=None, warm=None, epsilon=None):
    """All objective terms over the training nodes at the current parameters.

    The balancing term is the entropic transport objective. By default its
    plan is solved from the current representation and then held constant
    (envelope gradient); passing a solved ``transport`` problem reuses that
    plan instead. ``warm`` seeds the Sinkhorn dual potentials and
    ``epsilon`` overrides the median-scaled regularisation. ``params`` may
    be a ParamStore (taped) or a plain name -> array mapping (values only).
    """
    cfg = cfg.effective()
    h = representation(params, cfg, ds.X, ds.graph)
    t = ds.t
    y_hat = outcome_forward(h, t, params, cfg.head_layers)
    loss_y = factual_loss(y_hat, ds.y, train_idx)

    loss_t = dc.Tensor(0.0)
    if cfg.alpha > 0 and pairs is not None and len(pairs):
        p = pair_probability(h[pairs.centers], h[pairs.neighbors], params["rel.W"], params["rel.b"])
        loss_t = relation_loss(pairs.labels, p)

    treated = train_idx[t[train_idx] == 1]
    control = train_idx[t[train_idx] == 0]
    if len(treated) == 0 or len(control) == 0:
        raise ConfigurationError("training nodes contain a single treatment group")
    h_t, h_c = h[treated], h[control]
    if transport is None:
        transport = solve_transport(_values(h_t), _values(h_c), cfg, warm, epsilon)
    wass = balancing_term(h_t, h_c, transport)

    l2 = params.sqnorm() if isinstance(params, dc.ParamStore) else float(sum(np.sum(v * v) for v in params.values()))
    total = total_loss(loss_y, loss_t, wass, l2, cfg.alpha, cfg.beta, cfg.lam)
    return LossParts(loss_y, loss_t, wass, l2, total, h, y_hat, transport)


@dataclass
class TrainResult:
    params: dc.ParamStore
    best_params: dc.ParamStore
    trace: list
    best_epoch: int
    config: TrainConfig


def train(ds, cfg, log_every=0):
    """Full-graph training with per-epoch pair resampling and early stopping.

    At epoch ``e`` the losses and the validation factual MSE are evaluated at
    the current parameters, which are snapshotted if the validation MSE
    improved; then one optimizer step is taken. Training stops after
    ``patience`` epochs without improvement.
    """
    eff = cfg.effective()
    train_idx = np.asarray(ds.splits["train"])
    val_idx = np.asarray(ds.splits["val"])
    tt = ds.t[train_idx]
    if tt.min() == tt.max():
        raise ConfigurationError("training nodes contain a single treatment group")
    params = build_params(eff, ds.X.shape[1])
    opt = dc.Adam(params, lr=eff.lr)
    trace = []
    best_val = np.inf
    best_epoch = -1
    best_state = params.state()
    warm = None
    for epoch in range(eff.epochs):
        pairs = sample_pairs(ds.graph, ds.t, eff.seed, epoch, nodes=train_idx) if eff.uses_relation else None
        params.zero_grad()
        parts = loss_parts(params, eff, ds, train_idx, pairs, warm=warm)
        warm = parts.transport.potentials
        val_mse = factual_loss(parts.y_hat.data, ds.y, val_idx) if len(val_idx) else float("nan")
        row = {"epoch": epoch, **parts.values(), "val_mse": val_mse}
        trace.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d total %.6g val %.6g", epoch, row["total"], val_mse)
        if val_mse < best_val:
            best_val, best_epoch = val_mse, epoch
            best_state = params.state()
        elif epoch - best_epoch >= eff.patience:
            break
        parts.total.backward()
        try:
            opt.step()
        except dc.GradientError as exc:
            raise dc.GradientError(f"epoch {epoch}: {exc}") from None
    best = params.copy()
    best.load_state(best_state)
    return TrainResult(params, best, trace, best_epoch, cfg)


def predict_outcomes(state, cfg, ds):
    """``(y1_hat, y0_hat)`` for every node from a parameter mapping."""
    eff = cfg.effective()
    h = representation(state, eff, ds.X, ds.graph)
    return regressor(h, state, 1, eff.head_layers), regressor(h, state, 0, eff.head_layers)


def trace_csv(trace):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in TRACE_COLUMNS[1:]])
    return buf.getvalue()


def write_trace(trace, path):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trace_csv(trace))
    os.replace(tmp, path)


def save_params(params, cfg, path, in_dim, extra=None):
    state = params.state() if isinstance(params, dc.ParamStore) else params
    meta = {"config": cfg.to_dict(), "in_dim": int(in_dim)}
    meta.update(extra or {})
    dc.save_checkpoint(path, state, meta)


def load_params(path):
    """Return ``(state, TrainConfig, meta)`` from a checkpoint."""
    state, meta = dc.load_checkpoint(path)
    return state, TrainConfig(**meta["config"]), meta
