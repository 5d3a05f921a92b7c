"""Synthetic networked observational data with known potential outcomes.

Mechanism, per node ``i`` with latent confounder ``z_i ~ N(0, I_r)`` and
neighbour mean ``zbar_i``::

    x_i  = Phi z_i + sigma_x * noise
    p_i  = sigmoid(a <w_t, z_i> + k a <w_t, zbar_i>),   t_i ~ Bernoulli(p_i)
    y_i^tau = <w_y, z_i> + k <w_y', zbar_i> + tau (c0 + <w_e, z_i>) + sigma_y * e_i

The noise ``e_i`` is shared by both potential outcomes, so the individual
effect is ``c0 + <w_e, z_i>`` exactly. ``zbar_i`` never enters the features of
node ``i``; it is only visible through the neighbours' features.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field

import networkx as nx
import numpy as np

from .graph import Graph, GraphError

SPLIT_NAMES = ("train", "val", "test")
FILES = ("meta.json", "edges.csv", "features.csv", "units.csv", "splits.csv")


class DatasetFormatError(ValueError):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


@dataclass
class GeneratorConfig:
    n: int = 300
    m: int = 3
    d: int = 50
    r: int = 5
    k: float = 1.0
    a: float = 1.0
    c0: float = 1.0
    sigma_x: float = 0.1
    sigma_y: float = 0.1
    # coefficient scales of the four linear maps
    scale_t: float = 4.0
    scale_y: float = 0.2
    scale_nbr: float = 3.0
    scale_effect: float = 0.3
    # cosine between the outcome's neighbour direction w_y' and w_t
    nbr_alignment: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not self.n > self.m >= 1:
            raise ValueError(f"need n > m >= 1, got n={self.n}, m={self.m}")
        if self.d < 1 or self.r < 1:
            raise ValueError("feature and confounder dimensions must be positive")
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if not -1 <= self.nbr_alignment <= 1:
            raise ValueError("nbr_alignment must lie in [-1, 1]")
        if self.sigma_x < 0 or self.sigma_y < 0 or self.a < 0:
            raise ValueError("scales must be non-negative")


@dataclass
class NetworkedDataset:
    graph: Graph
    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0: np.ndarray = None
    y1: np.ndarray = None
    splits: dict = None
    meta: dict = field(default_factory=dict)
    # latent confounders, kept in memory for diagnostics and never saved
    z: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return self.graph.n

    @property
    def has_ground_truth(self):
        return self.y0 is not None and self.y1 is not None

    @property
    def ite(self):
        if not self.has_ground_truth:
            raise ValueError("dataset carries no ground-truth potential outcomes")
        return self.y1 - self.y0

    def nodes(self, split):
        return self.splits[split]


def generate_graph(n, m, seed):
    """Preferential-attachment graph with ``m (n - m)`` edges.

    Starts from a star on ``m + 1`` nodes; each later node attaches ``m`` edges
    to distinct existing nodes with probability proportional to degree.
    """
    if not (isinstance(n, (int, np.integer)) and isinstance(m, (int, np.integer))) or not n > m >= 1:
        raise ValueError(f"need integers n > m >= 1, got n={n}, m={m}")
    g = nx.barabasi_albert_graph(int(n), int(m), seed=int(seed))
    edges = np.array(sorted(tuple(sorted(e)) for e in g.edges()), dtype=np.int64).reshape(-1, 2)
    return Graph(n, edges)


def tail_exponent(degrees, xmin=None):
    """Power-law tail exponent of a degree sequence.

    Discrete maximum-likelihood approximation
    ``1 + n / sum(log(k / (xmin - 1/2)))`` over degrees ``k >= xmin``;
    ``xmin`` defaults to the smallest positive degree.
    """
    deg = np.asarray(degrees, dtype=float)
    deg = deg[deg > 0]
    if xmin is None:
        xmin = deg.min() if deg.size else 1
    tail = deg[deg >= xmin]
    if tail.size < 2:
        raise ValueError("too few degrees in the tail to fit an exponent")
    return 1.0 + tail.size / np.sum(np.log(tail / (xmin - 0.5)))


def neighbor_mean(graph, z):
    deg = graph.degrees.astype(float)
    s = graph.adjacency @ z
    return np.where(deg[:, None] > 0, s / np.maximum(deg, 1)[:, None], 0.0)


def _aligned(v, ref, rho):
    """Rescale ``v`` to the norm of a standard draw with cosine ``rho`` to ``ref``."""
    norm = np.linalg.norm(v)
    u = ref / np.linalg.norm(ref)
    perp = v - (v @ u) * u
    pn = np.linalg.norm(perp)
    if rho == 0:
        return v
    out = rho * u + math.sqrt(1 - rho * rho) * (perp / pn if pn > 0 else 0.0)
    return out * norm


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_observational(graph, cfg, max_retries=10):
    """Draw features, treatments and potential outcomes on ``graph``."""
    rng = np.random.default_rng([cfg.seed, 1])
    n, r, d = graph.n, cfg.r, cfg.d
    z = rng.standard_normal((n, r))
    phi = rng.standard_normal((d, r)) / math.sqrt(r)
    X = z @ phi.T + cfg.sigma_x * rng.standard_normal((n, d))
    w_t = cfg.scale_t * rng.standard_normal(r) / math.sqrt(r)
    w_y = cfg.scale_y * rng.standard_normal(r) / math.sqrt(r)
    w_nbr = _aligned(rng.standard_normal(r), w_t, cfg.nbr_alignment) * cfg.scale_nbr / math.sqrt(r)
    w_e = cfg.scale_effect * rng.standard_normal(r) / math.sqrt(r)
    zbar = neighbor_mean(graph, z)

    logit = cfg.a * (z @ w_t) + cfg.k * cfg.a * (zbar @ w_t)
    prop = _sigmoid(logit)
    for attempt in range(max_retries + 1):
        t_rng = np.random.default_rng([cfg.seed, 2, attempt])
        t = (t_rng.uniform(size=n) < prop).astype(np.int64)
        if 0 < t.sum() < n:
            break
    else:
        raise ValueError(f"treatment assignment stayed single-group after {max_retries} retries")

    noise = cfg.sigma_y * rng.standard_normal(n)
    base = z @ w_y + cfg.k * (zbar @ w_nbr) + noise
    y0 = base
    y1 = base + cfg.c0 + z @ w_e
    y = np.where(t == 1, y1, y0)
    meta = {
        "n": n,
        "d": d,
        "num_edges": graph.num_edges,
        "k": cfg.k,
        "seed": cfg.seed,
        "has_ground_truth": True,
        "generator": asdict(cfg),
    }
    return NetworkedDataset(graph, X, t, y, y0, y1, split_nodes(n, cfg.seed), meta, z=z)


def generate(cfg):
    """Graph plus observational data from one :class:`GeneratorConfig`."""
    return generate_observational(generate_graph(cfg.n, cfg.m, cfg.seed), cfg)


def split_nodes(n, seed):
    """Seeded 60/20/20 split: ``floor(0.6 n)`` train, ``floor(0.2 n)`` val, rest test."""
    if n < 5:
        raise ValueError("need at least 5 nodes to split")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    n_train = (6 * n) // 10
    n_val = (2 * n) // 10
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }


# serialisation -----------------------------------------------------------------
def _fmt(v):
    return repr(float(v))


def _write(path, lines):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    os.replace(tmp, path)


def save_dataset(ds, directory):
    os.makedirs(directory, exist_ok=True)
    meta = dict(ds.meta)
    meta.update(n=ds.n, d=int(ds.X.shape[1]), num_edges=ds.graph.num_edges, has_ground_truth=ds.has_ground_truth)
    tmp = os.path.join(directory, "meta.json.tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(directory, "meta.json"))

    _write(os.path.join(directory, "edges.csv"), ["src,dst"] + [f"{i},{j}" for i, j in ds.graph.edges])
    _write(os.path.join(directory, "features.csv"), [",".join(_fmt(v) for v in row) for row in ds.X])
    if ds.has_ground_truth:
        units = ["node,t,y,y0,y1"] + [
            f"{i},{int(ds.t[i])},{_fmt(ds.y[i])},{_fmt(ds.y0[i])},{_fmt(ds.y1[i])}" for i in range(ds.n)
        ]
    else:
        units = ["node,t,y"] + [f"{i},{int(ds.t[i])},{_fmt(ds.y[i])}" for i in range(ds.n)]
    _write(os.path.join(directory, "units.csv"), units)
    label = np.empty(ds.n, dtype=object)
    for name in SPLIT_NAMES:
        label[ds.splits[name]] = name
    _write(os.path.join(directory, "splits.csv"), ["node,split"] + [f"{i},{label[i]}" for i in range(ds.n)])


def _read_lines(path):
    if not os.path.exists(path):
        raise DatasetFormatError(path, None, "file not found")
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _parse_rows(path, header, ncols=None):
    lines = _read_lines(path)
    start = 0
    if header is not None:
        if not lines or lines[0].strip() not in header:
            raise DatasetFormatError(path, 1, f"expected header {' or '.join(header)!r}")
        start = 1
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if ncols is not None and len(parts) != ncols:
            raise DatasetFormatError(path, lineno, f"expected {ncols} fields, got {len(parts)}")
        rows.append((lineno, parts))
    return lines[0].strip() if header is not None and lines else None, rows


def _num(path, lineno, s, kind=float):
    try:
        return kind(s)
    except ValueError:
        raise DatasetFormatError(path, lineno, f"cannot parse {s!r} as {kind.__name__}") from None


def load_dataset(directory):
    mpath = os.path.join(directory, "meta.json")
    if not os.path.exists(mpath):
        raise DatasetFormatError(mpath, None, "file not found")
    with open(mpath, encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(mpath, exc.lineno, exc.msg) from None
    for key in ("n", "d"):
        if key not in meta:
            raise DatasetFormatError(mpath, None, f"missing key {key!r}")
    n, d = int(meta["n"]), int(meta["d"])

    epath = os.path.join(directory, "edges.csv")
    _, rows = _parse_rows(epath, ("src,dst",), 2)
    edges = []
    for lineno, (a, b) in rows:
        i, j = _num(epath, lineno, a, int), _num(epath, lineno, b, int)
        if i == j:
            raise DatasetFormatError(epath, lineno, f"self-loop on node {i}")
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetFormatError(epath, lineno, f"endpoint out of range [0, {n})")
        edges.append((i, j))
    try:
        graph = Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
    except GraphError as exc:
        raise DatasetFormatError(epath, None, str(exc)) from None

    fpath = os.path.join(directory, "features.csv")
    _, rows = _parse_rows(fpath, None, d)
    if len(rows) != n:
        raise DatasetFormatError(fpath, None, f"expected {n} rows, got {len(rows)}")
    X = np.array([[_num(fpath, ln, v) for v in parts] for ln, parts in rows], dtype=float).reshape(n, d)

    upath = os.path.join(directory, "units.csv")
    header, rows = _parse_rows(upath, ("node,t,y", "node,t,y,y0,y1"))
    width = len(header.split(","))
    t = np.zeros(n, dtype=np.int64)
    y = np.zeros(n)
    y0 = np.zeros(n) if width == 5 else None
    y1 = np.zeros(n) if width == 5 else None
    seen = np.zeros(n, dtype=bool)
    for lineno, parts in rows:
        if len(parts) != width:
            raise DatasetFormatError(upath, lineno, f"expected {width} fields, got {len(parts)}")
        i = _num(upath, lineno, parts[0], int)
        if not 0 <= i < n or seen[i]:
            raise DatasetFormatError(upath, lineno, f"bad or repeated node id {i}")
        seen[i] = True
        t[i] = _num(upath, lineno, parts[1], int)
        if t[i] not in (0, 1):
            raise DatasetFormatError(upath, lineno, f"treatment must be 0 or 1, got {t[i]}")
        y[i] = _num(upath, lineno, parts[2])
        if width == 5:
            y0[i] = _num(upath, lineno, parts[3])
            y1[i] = _num(upath, lineno, parts[4])
    if not seen.all():
        raise DatasetFormatError(upath, None, f"missing rows for {int((~seen).sum())} nodes")

    spath = os.path.join(directory, "splits.csv")
    _, rows = _parse_rows(spath, ("node,split",), 2)
    buckets = {name: [] for name in SPLIT_NAMES}
    seen[:] = False
    for lineno, (a, name) in rows:
        i = _num(spath, lineno, a, int)
        if name not in buckets:
            raise DatasetFormatError(spath, lineno, f"unknown split {name!r}")
        if not 0 <= i < n or seen[i]:
            raise DatasetFormatError(spath, lineno, f"bad or repeated node id {i}")
        seen[i] = True
        buckets[name].append(i)
    if not seen.all():
        raise DatasetFormatError(spath, None, "split assignment does not cover every node")
    splits = {name: np.array(sorted(v), dtype=np.int64) for name, v in buckets.items()}
    return NetworkedDataset(graph, X, t, y, y0, y1, splits, meta)


def datasets_equal(a, b):
    """Field-for-field equality, floats compared bit-exactly."""
    same = a.graph == b.graph and np.array_equal(a.X, b.X) and np.array_equal(a.t, b.t) and np.array_equal(a.y, b.y)
    same = same and a.has_ground_truth == b.has_ground_truth
    if a.has_ground_truth and b.has_ground_truth:
        same = same and np.array_equal(a.y0, b.y0) and np.array_equal(a.y1, b.y1)
    return bool(same and all(np.array_equal(a.splits[s], b.splits[s]) for s in SPLIT_NAMES))
