"""Command-line front end: generate, train, evaluate, ablate, gradcheck.

Exit codes are 0 on success, 1 on runtime failures and 2 on usage or
validation errors.
"""

import argparse
import json
import logging
import math
import os
import sys

from . import __version__
from .data import DatasetFormatError, GeneratorConfig, generate, load_dataset, save_dataset
from .evaluation import evaluate, format_table, run_experiment, write_results
from .gradcheck import finite_difference_check
from .heads import ConfigurationError
from .trainer import VARIANTS, SinkhornConfig, TrainConfig, load_params, save_params, train, write_trace

log = logging.getLogger("hyperite")

SEED_ENV = "HYPERITE_SEED"
CLI_GRADCHECK_NODES = 50

# accepted values per config key; ranges are given as predicates
GRIDS = {
    "lr": (1e-3, 1e-2),
    "curvature": (0.0, 1e-3, 1e-2, 1e-1, 1.0),
    "layers": (1, 2),
    "hidden_dim": (50, 100),
    "head_layers": (1, 2),
    "head_hidden": (50, 100),
    "alpha": (1e-3, 1e-2, 1e-1, 1.0),
    "beta": (1e-5, 1e-4, 1e-3),
    "lambda": (1e-5, 1e-4, 1e-3),
}
RANGES = {
    "epochs": (lambda v: isinstance(v, int) and v >= 1, "a positive integer"),
    "patience": (lambda v: isinstance(v, int) and v >= 1, "a positive integer"),
    "seed": (lambda v: isinstance(v, int) and v >= 0, "a non-negative integer"),
    "variant": (lambda v: v in VARIANTS, f"one of {', '.join(VARIANTS)}"),
}
SINKHORN_RANGES = {
    "epsilon_scale": (lambda v: _real(v) and 0 < v, "a positive number"),
    "max_iters": (lambda v: isinstance(v, int) and v >= 1, "a positive integer"),
    "tol": (lambda v: _real(v) and 0 < v < 1, "a number in (0, 1)"),
}


class UsageError(Exception):
    """Bad flags or configuration; exit code 2."""


def _real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _on_grid(v, grid):
    return _real(v) and any(math.isclose(v, g, rel_tol=1e-9, abs_tol=0.0) or v == g for g in grid)


def parse_config(doc):
    """Validate a run-config mapping and return ``TrainConfig`` keyword arguments."""
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    known = set(GRIDS) | set(RANGES) | {"sinkhorn"}
    for key in doc:
        if key not in known:
            raise UsageError(f"config: unknown key '{key}'")
    kwargs = {}
    for key, value in doc.items():
        if key in GRIDS:
            if not _on_grid(value, GRIDS[key]):
                raise UsageError(f"config: '{key}' must be one of {list(GRIDS[key])}, got {value!r}")
            value = int(value) if isinstance(GRIDS[key][0], int) else float(value)
        elif key in RANGES:
            ok, what = RANGES[key]
            if isinstance(value, bool) or not ok(value):
                raise UsageError(f"config: '{key}' must be {what}, got {value!r}")
        elif key == "sinkhorn":
            value = _parse_sinkhorn(value)
        kwargs["lam" if key == "lambda" else key] = value
    return kwargs


def _parse_sinkhorn(doc):
    if not isinstance(doc, dict):
        raise UsageError("config: 'sinkhorn' must be an object")
    for key, value in doc.items():
        if key not in SINKHORN_RANGES:
            raise UsageError(f"config: unknown key 'sinkhorn.{key}'")
        ok, what = SINKHORN_RANGES[key]
        if isinstance(value, bool) or not ok(value):
            raise UsageError(f"config: 'sinkhorn.{key}' must be {what}, got {value!r}")
    return SinkhornConfig(**doc)


def load_config(path, seed=None):
    """Build a ``TrainConfig`` from a JSON file (or defaults when ``path`` is None).

    Seed precedence: ``seed`` argument, then ``$HYPERITE_SEED``, then the file.
    """
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: {path} is not valid JSON ({exc})") from None
        except OSError as exc:
            raise UsageError(f"config: cannot read {path} ({exc.strerror})") from None
    kwargs = parse_config(doc)
    resolved = resolve_seed(seed, kwargs.get("seed"))
    if resolved is not None:
        kwargs["seed"] = resolved
    return TrainConfig(**kwargs)


def resolve_seed(flag, fallback=None):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        if value < 0:
            raise UsageError(f"{SEED_ENV} must be non-negative")
        return value
    return fallback


def _atomic_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _nonneg_int(name):
    def conv(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if v < 0:
            raise argparse.ArgumentTypeError(f"{name} must be non-negative, got {v}")
        return v
    return conv


def _pos_int(name):
    def conv(text):
        v = _nonneg_int(name)(text)
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {v}")
        return v
    return conv


def _nonneg_float(name):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not math.isfinite(v) or v < 0:
            raise argparse.ArgumentTypeError(f"{name} must be a finite non-negative number, got {text}")
        return v
    return conv


# commands -----------------------------------------------------------------------
def cmd_generate(args):
    seed = resolve_seed(args.seed, 0)
    try:
        cfg = GeneratorConfig(n=args.nodes, m=args.attach, k=args.k, d=args.features, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = generate(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: {ds.n} nodes, {ds.graph.num_edges} edges, {int(ds.t.sum())} treated")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.seed)
    ds = load_dataset(args.data)
    res = train(ds, cfg, log_every=args.log_every)
    os.makedirs(args.out, exist_ok=True)
    in_dim = ds.X.shape[1]
    save_params(res.best_params, cfg, os.path.join(args.out, "best.ckpt"), in_dim, {"epoch": res.best_epoch})
    save_params(res.params, cfg, os.path.join(args.out, "final.ckpt"), in_dim, {"epoch": len(res.trace) - 1})
    write_trace(res.trace, os.path.join(args.out, "trace.csv"))
    _atomic_json(os.path.join(args.out, "config.json"), cfg.to_dict())
    last = res.trace[-1]
    print(f"trained {cfg.variant} for {len(res.trace)} epochs; best epoch {res.best_epoch}, "
          f"val mse {res.trace[res.best_epoch]['val_mse']:.6g}, final total {last['total']:.6g}")
    return 0


def cmd_evaluate(args):
    ds = load_dataset(args.data)
    state, cfg, meta = load_params(args.checkpoint)
    expected = (ds.n, int(meta["in_dim"]))
    if ds.X.shape[1] != expected[1]:
        print(f"error: shape mismatch: checkpoint expects features of shape (n, {expected[1]}), "
              f"data has {ds.X.shape}", file=sys.stderr)
        return 1
    if not ds.has_ground_truth:
        print("error: dataset has no ground-truth potential outcomes", file=sys.stderr)
        return 1
    reports = evaluate(state, cfg, ds)
    print(f"{'split':<6} {'n':>5} {'pehe':>12} {'ate_error':>12}")
    for r in reports:
        print(f"{r.split:<6} {r.n:>5} {r.pehe:>12.6f} {r.ate_error:>12.6f}")
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    doc = {r.split: {"n": r.n, "pehe": r.pehe, "ate_error": r.ate_error} for r in reports}
    doc["variant"] = cfg.variant
    _atomic_json(os.path.join(out, "metrics.json"), doc)
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config, args.seed)
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    reports, traces = run_experiment(args.data, cfg, VARIANTS, seeds, jobs=args.jobs)
    write_results(reports, args.out)
    tdir = os.path.join(args.out, "traces")
    os.makedirs(tdir, exist_ok=True)
    for (variant, seed), trace in traces.items():
        if trace:
            write_trace(trace, os.path.join(tdir, f"{variant}-{seed}.csv"))
    print(format_table(reports))
    failed = [r for r in reports if r.error is not None]
    for r in failed:
        print(f"failed: {r.variant} seed {r.seed}: {r.error}", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    cfg = load_config(args.config, args.seed)
    ds = load_dataset(args.data)
    if ds.n > CLI_GRADCHECK_NODES:
        raise UsageError(f"gradcheck needs a dataset of at most {CLI_GRADCHECK_NODES} nodes, got {ds.n}")
    report = finite_difference_check(None, cfg, ds, max_nodes=CLI_GRADCHECK_NODES, _corrupt=args.corrupt_gradient)
    print(report.format())
    print("gradcheck", "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


# parser -------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="hyperite", description="Networked treatment-effect estimation with a hyperbolic encoder.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic networked dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--nodes", type=_pos_int("--nodes"), default=300)
    g.add_argument("--attach", type=_pos_int("--attach"), default=3)
    g.add_argument("--k", type=_nonneg_float("--k"), default=1.0)
    g.add_argument("--features", type=_pos_int("--features"), default=50, help="feature dimension d")
    g.add_argument("--seed", type=_nonneg_int("--seed"), default=None)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one model and write checkpoints and trace.csv")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=_nonneg_int("--seed"), default=None)
    t.add_argument("--log-every", type=_nonneg_int("--log-every"), default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", default=None, help="directory for metrics.json (default: next to the checkpoint)")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="run all variants over several seeds")
    a.add_argument("--data", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--seeds", type=_pos_int("--seeds"), default=10)
    a.add_argument("--out", required=True)
    a.add_argument("--jobs", type=_pos_int("--jobs"), default=1)
    a.add_argument("--seed", type=_nonneg_int("--seed"), default=None)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    c.add_argument("--data", required=True)
    c.add_argument("--config", default=None)
    c.add_argument("--seed", type=_nonneg_int("--seed"), default=None)
    c.add_argument("--corrupt-gradient", type=float, default=0.0, help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
