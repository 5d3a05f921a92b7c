"""Central finite-difference check of every objective component.

The smooth terms (factual MSE, relation BCE, l2) are compared against their
backpropagated gradients directly. For the balancing term the analytic side
uses the fixed-plan envelope gradient while the numerical side re-solves
the transport plan at every perturbation (with epsilon held at its value at
the unperturbed point), hence its looser tolerance. The plain transport
cost ``<P, C>`` is also differenced and reported for information only; its
fixed-plan gradient is biased, so it does not gate the result.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .data import GeneratorConfig, generate
from .heads import ConfigurationError, sample_pairs
from .trainer import SinkhornConfig, TrainConfig, build_params, loss_parts

COMPONENTS = ("loss_y", "loss_t", "l2", "wass")
INFO = "transport"
MAX_NODES = 30
# the re-solved plan has to be far more accurate than the FD step
CHECK_SINKHORN = SinkhornConfig(max_iters=20000, tol=1e-14)


@dataclass
class ToleranceSpec:
    smooth: float = 1e-4
    balancing: float = 1e-2
    step: float = 1e-4
    floor: float = 1e-10

    def for_component(self, name):
        return self.balancing if name == "wass" else self.smooth


@dataclass
class ComponentReport:
    name: str
    tolerance: float
    per_param: dict = field(default_factory=dict)
    gating: bool = True

    @property
    def max_rel_error(self):
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self):
        return not self.gating or self.max_rel_error <= self.tolerance


@dataclass
class GradcheckReport:
    components: list

    @property
    def passed(self):
        return all(c.passed for c in self.components)

    def __getitem__(self, name):
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def format(self):
        lines = []
        for c in self.components:
            worst = max(c.per_param, key=c.per_param.get) if c.per_param else "-"
            status = ("PASS" if c.passed else "FAIL") if c.gating else "info"
            tol = f"{c.tolerance:.0e}" if c.gating else "none"
            lines.append(f"{c.name:<9} max_rel_err={c.max_rel_error:.3e} tol={tol:<5} worst={worst} {status}")
        return "\n".join(lines)


def rel_error(numeric, analytic, floor=1e-10):
    """``max|fd - an| / max(|fd|_inf, |an|_inf)``; zero when both are below ``floor``."""
    scale = max(np.max(np.abs(numeric), initial=0.0), np.max(np.abs(analytic), initial=0.0))
    if scale < floor:
        return 0.0
    return float(np.max(np.abs(numeric - analytic)) / scale)


def fixture(seed=4, n=12):
    """A small synthetic instance and a matching compact configuration.

    The default seed leaves at least two units in each arm, so the transport
    plan is not trivially fixed.
    """
    ds = generate(GeneratorConfig(n=n, m=2, d=6, r=3, seed=seed))
    cfg = TrainConfig(hidden_dim=6, head_hidden=6, seed=seed, curvature=1e-1, alpha=1e-1)
    return ds, cfg


def random_params(cfg, in_dim, seed=0, jitter=0.1):
    """Initial parameters plus Gaussian jitter.

    Zero-initialised biases put hidden units exactly on the ReLU kink for
    nodes whose encoding is zero, where one-sided derivatives differ.
    """
    params = build_params(cfg, in_dim)
    rng = np.random.default_rng([int(seed), 7])
    for _, p in params.items():
        p.data += jitter * rng.standard_normal(p.shape)
    return params


def finite_difference_check(params, cfg, ds, tolerance=None, max_nodes=MAX_NODES, _corrupt=0.0):
    """Compare analytic and numerical gradients of each loss component.

    ``params`` may be ``None`` for jittered initial parameters (see
    :func:`random_params`).
    The objective is evaluated over every node so that small graphs still
    have both treatment groups and some relation pairs. Returns a
    :class:`GradcheckReport`.
    """
    tol = tolerance or ToleranceSpec()
    if ds.n > max_nodes:
        raise ConfigurationError(f"gradient check is limited to {max_nodes} nodes, dataset has {ds.n}")
    cfg = replace(cfg, sinkhorn=replace(cfg.sinkhorn, max_iters=CHECK_SINKHORN.max_iters, tol=CHECK_SINKHORN.tol))
    eff = cfg.effective()
    if params is None:
        params = random_params(eff, ds.X.shape[1], eff.seed)
    nodes = np.arange(ds.n)
    pairs = sample_pairs(ds.graph, ds.t, eff.seed, 0) if eff.uses_relation else None

    base = loss_parts(params, eff, ds, nodes, pairs)
    solved = base.transport
    warm, eps = solved.potentials, solved.epsilon_used
    analytic = {}
    for name in COMPONENTS:
        params.zero_grad()
        term = getattr(loss_parts(params, eff, ds, nodes, pairs, transport=solved), name)
        if isinstance(term, dc.Tensor) and term.requires_grad:
            term.backward()
        analytic[name] = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    # the entropy part is a constant, so both terms share the fixed-plan gradient
    analytic[INFO] = analytic["wass"]
    if _corrupt:
        for g in analytic["loss_y"].values():
            g += _corrupt * (1.0 + np.abs(g))

    names = COMPONENTS + (INFO,)
    numeric = {name: {k: np.zeros_like(p.data) for k, p in params.items()} for name in names}

    # array views share memory with the parameters, so perturbations show through
    views = {k: p.data for k, p in params.items()}

    def values(reuse):
        # head parameters leave the representation, hence the plan, unchanged
        parts = loss_parts(views, eff, ds, nodes, pairs, transport=solved if reuse else None, warm=warm, epsilon=eps)
        out = parts.values()
        out[INFO] = parts.transport.distance
        return out

    h = tol.step
    for key, p in params.items():
        reuse = not key.startswith("enc.")
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = values(reuse)
            flat[i] = orig - h
            minus = values(reuse)
            flat[i] = orig
            for name in names:
                numeric[name][key].reshape(-1)[i] = (plus[name] - minus[name]) / (2 * h)
    params.zero_grad()

    reports = []
    for name in names:
        rep = ComponentReport(name, tol.for_component(name), gating=name != INFO)
        for key in params.names():
            rep.per_param[key] = rel_error(numeric[name][key], analytic[name][key], tol.floor)
        reports.append(rep)
    return GradcheckReport(reports)
