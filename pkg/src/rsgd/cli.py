"""Command-line entry point: ``rsgd run|sweep|check|gen``.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 runtime
numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import trend_report
from .errors import ConfigError, DomainError, NumericError, ParseError
from .geometry import manifold_from_dict
from .objectives import (
    L1Objective,
    MatrixCompletion,
    ReluNet,
    SparsePCA,
    WrongSignSubgradient,
    load_instance,
    parse_libsvm,
    random_completion_matrix,
    random_sparse_pca_matrix,
    save_instance,
    synthetic_regression,
    write_libsvm,
)
from .optimizer import RunConfig, multi_run, schedule_from_dict
from .seeding import make_rng
from . import theory_checks as tc

OUTPUT_ENV = "RSGD_OUTPUT_ROOT"

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# -- configuration ------------------------------------------------------------

PROBLEM_KEYS = {
    "sparse_pca": {"n", "rho", "p_cols", "seed", "instance", "on_sphere"},
    "matrix_completion": {"m", "n", "rank", "sigma", "seed", "instance"},
    "relu_net": {"data_path", "widths", "batch", "standardize", "n_out", "n_features"},
    "l1_sphere": {"n"},
}


@dataclass
class ExperimentConfig:
    """One JSON experiment file.

    ``schedules`` holds one schedule for ``run`` and the grid for ``sweep``.
    Relative paths inside ``problem`` resolve against ``base_dir``.
    """

    problem: dict
    schedules: list
    iterations: int = 10_000
    n_runs: int = 10
    base_seed: int = 0
    eval_every: int = 100
    renormalize_every: int = 100
    use_exp_when_available: bool = True
    output_dir: str | None = None
    name: str = "experiment"
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentConfig":
        d = dict(d)
        if "schedule" in d and "schedules" in d:
            raise ConfigError("give either 'schedule' or 'schedules', not both")
        scheds = [d.pop("schedule")] if "schedule" in d else d.pop("schedules", None)
        if scheds is None:
            raise ConfigError("missing 'schedule' / 'schedules'")
        if "problem" not in d:
            raise ConfigError("missing 'problem'")
        known = {f for f in cls.__dataclass_fields__ if f not in ("schedules", "base_dir")}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(schedules=list(scheds), base_dir=Path(base_dir), **d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "problem": self.problem,
            "schedules": self.schedules,
            "iterations": self.iterations,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "eval_every": self.eval_every,
            "renormalize_every": self.renormalize_every,
            "use_exp_when_available": self.use_exp_when_available,
            "output_dir": self.output_dir,
        }

    def validate(self):
        kind = self.problem.get("kind")
        if kind not in PROBLEM_KEYS or kind == "l1_sphere":
            raise ConfigError(f"unknown problem kind {kind!r}")
        extra = set(self.problem) - PROBLEM_KEYS[kind] - {"kind"}
        if extra:
            raise ConfigError(f"unknown keys for {kind}: {sorted(extra)}")
        for key in ("data_path", "instance"):
            if key in self.problem and not self._path(self.problem[key]).exists():
                raise ConfigError(f"{key} {self.problem[key]!r} does not exist")
        if kind == "relu_net" and "data_path" not in self.problem:
            raise ConfigError("relu_net needs data_path")
        for s in self.schedules:
            schedule_from_dict(s)
        for key in ("iterations", "n_runs", "eval_every"):
            if not isinstance(getattr(self, key), int) or getattr(self, key) < 1:
                raise ConfigError(f"{key} must be a positive integer")
        if self.renormalize_every < 0:
            raise ConfigError("renormalize_every must be >= 0")

    def _path(self, p) -> Path:
        p = Path(os.path.expanduser(str(p)))
        return p if p.is_absolute() else self.base_dir / p

    def build_objective(self):
        return build_objective(self.problem, self.base_dir)


def _int(d, key, default=None, minimum=1):
    v = d.get(key, default)
    if v is None or int(v) != v or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return int(v)


def build_objective(problem: dict, base_dir=".", wrong_sign: bool = False):
    """Construct the objective described by a ``problem`` config block."""
    base_dir = Path(base_dir)
    if not isinstance(problem, dict):
        raise ConfigError(f"a problem must be a JSON object with a 'kind', got {problem!r}")
    kind = problem.get("kind")
    try:
        if kind == "sparse_pca":
            if "instance" in problem:
                meta, A = load_instance(base_dir / problem["instance"])
            else:
                A = random_sparse_pca_matrix(_int(problem, "n"), _int(problem, "seed", 0, 0))
            obj = SparsePCA(A, float(problem.get("rho", 1.0)), _int(problem, "p_cols", 1),
                            bool(problem.get("on_sphere", False)))
        elif kind == "matrix_completion":
            rank = _int(problem, "rank")
            if "instance" in problem:
                meta, A = load_instance(base_dir / problem["instance"])
            else:
                A = random_completion_matrix(_int(problem, "m"), _int(problem, "n"), rank,
                                             _int(problem, "seed", 0, 0))
            obj = MatrixCompletion(A, rank, float(problem.get("sigma", 0.0)))
        elif kind == "relu_net":
            data = parse_libsvm(base_dir / problem["data_path"], problem.get("n_features"),
                                bool(problem.get("standardize", True)))
            obj = ReluNet(data, problem.get("widths", [3, 3, 3]), _int(problem, "n_out", 1),
                          _int(problem, "batch", 64))
        elif kind == "l1_sphere":
            from .geometry import Sphere
            obj = L1Objective(Sphere(_int(problem, "n", 3, 2)))
        else:
            raise ConfigError(f"unknown problem kind {kind!r}")
    except (DomainError, ParseError, OSError, KeyError) as exc:
        raise ConfigError(f"cannot build {kind}: {exc}") from exc
    return WrongSignSubgradient(obj) if wrong_sign else obj


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def output_root(args, cfg_dir=None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg_dir:
        return Path(cfg_dir)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# -- artifacts ----------------------------------------------------------------


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _save_point(path: Path, x):
    arrays = {}

    def walk(v, prefix):
        if isinstance(v, tuple):
            for i, a in enumerate(v):
                walk(a, f"{prefix}{i}_")
        elif hasattr(v, "U"):
            arrays.update({f"{prefix}U": v.U, f"{prefix}S": v.S, f"{prefix}V": v.V})
        else:
            arrays[f"{prefix}x"] = np.asarray(v)

    walk(x, "")
    np.savez(path, **arrays)


INSTANCE_NOTES = {
    "sparse_pca": "A has i.i.d. N(0,1) entries scaled by 1/sqrt(n)",
    "matrix_completion": "A has i.i.d. N(0,1) entries, truncated by SVD to the given rank, scaled to unit Frobenius norm",
    "relu_net": "features standardized to zero mean and unit variance",
}


def _instance_note(problem: dict) -> str:
    if "instance" in problem:
        return f"loaded from {problem['instance']}"
    note = INSTANCE_NOTES.get(problem.get("kind"), "")
    if problem.get("kind") == "relu_net" and not problem.get("standardize", True):
        note = "raw features"
    return note


def execute(cfg: ExperimentConfig, schedule: dict, out_dir: Path, workers: int = 1) -> dict:
    """Run one schedule with ``cfg.n_runs`` repetitions and write its artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    obj = cfg.build_objective()
    run_cfg = RunConfig(
        schedule_from_dict(schedule), cfg.iterations, cfg.base_seed, cfg.eval_every,
        cfg.renormalize_every, cfg.use_exp_when_available,
    )
    started = time.time()
    res = multi_run(run_cfg, obj, cfg.n_runs, workers=workers)
    for i, tr in enumerate(res.traces):
        (out_dir / f"trace_run{i:03d}.csv").write_text(tr.to_csv())
        _save_point(out_dir / f"final_point_run{i:03d}.npz", tr.final_point)
    summary = {"n_success": res.n_success, "failures": res.failures, "schedule": schedule}
    if res.traces:
        (out_dir / "aggregate.csv").write_text(res.aggregate_csv())
        stats = trend_report(res)
        (out_dir / "running_min.csv").write_text(stats.to_csv_columns())
        summary.update(stats.to_dict())
        summary["final_full_loss_mean"] = float(res.stats["full_loss"]["mean"][-1])
        summary["final_rgrad_norm_mean"] = float(res.stats["rgrad_norm"]["mean"][-1])
    _dump_json(out_dir / "stats.json", summary)
    _dump_json(out_dir / "metadata.json", {
        "config": dict(cfg.to_dict(), schedules=[schedule]),
        "objective": obj.describe(),
        "instance": _instance_note(cfg.problem),
        "seeds": res.seeds,
        "runs": [tr.metadata() for tr in res.traces],
        "failures": res.failures,
        "started_unix": started,
        "wall_seconds": time.time() - started,
        "version": __version__,
    })
    return summary


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    if len(cfg.schedules) != 1:
        raise ConfigError("run takes exactly one schedule; use sweep for grids")
    out = output_root(args, cfg.output_dir and cfg._path(cfg.output_dir)) / cfg.name
    summary = execute(cfg, cfg.schedules[0], out, args.workers)
    print(f"{cfg.name}: {summary['n_success']}/{cfg.n_runs} runs -> {out}")
    if summary["failures"]:
        for seed, msg, it in summary["failures"]:
            print(f"run with seed {seed} failed at iteration {it}: {msg}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    if not cfg.schedules:
        raise ConfigError("empty schedule grid")
    root = output_root(args, cfg.output_dir and cfg._path(cfg.output_dir)) / cfg.name
    rows, any_total_failure = [], False
    for sched in cfg.schedules:
        label = schedule_from_dict(sched).label
        s = execute(cfg, sched, root / label, args.workers)
        any_total_failure |= s["n_success"] == 0
        trends = s.get("trends", {})
        rows.append([
            label, s["n_success"], len(s["failures"]),
            repr(s.get("final_full_loss_mean", float("nan"))),
            repr(s.get("final_rgrad_norm_mean", float("nan"))),
            repr(trends.get("loss", {}).get("ratio", float("nan"))),
            repr(trends.get("rgrad_norm", {}).get("ratio", float("nan"))),
            s.get("verdict", "failed"),
        ])
        print(f"{label}: {s['n_success']}/{cfg.n_runs} runs, verdict {s.get('verdict', 'failed')}")
    header = ["cell", "n_success", "n_failed", "final_full_loss_mean", "final_rgrad_norm_mean",
              "loss_ratio", "rgrad_ratio", "verdict"]
    lines = [",".join(header)] + [",".join(map(str, r)) for r in rows]
    (root / "comparison.csv").write_text("\n".join(lines) + "\n")
    return EXIT_NUMERIC if any_total_failure else EXIT_OK


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg.base_seed = args.seed


# -- checks -------------------------------------------------------------------

CHECKS = ("retraction_axioms", "chain_rule", "loop_integral", "grad_ae", "lipschitz_gradient")


def _curve(spec: dict, manifold, rng):
    kind = spec.get("kind", "piecewise")
    T = int(spec.get("T_steps", 32))
    count = int(spec.get("n_points", 3))
    if spec.get("orthant"):
        pts = tc.orthant_points(manifold.dims[0], count, rng)
    else:
        pts = [manifold.random_point(rng) for _ in range(count)]
    if kind == "retraction":
        x = pts[0]
        return tc.CurveSpec.retraction_curve(manifold, x, manifold.random_tangent(x, rng, float(spec.get("norm", 1.0))), T)
    if kind == "piecewise":
        return tc.CurveSpec.piecewise(manifold, pts, T)
    if kind == "loop":
        return tc.CurveSpec.loop(manifold, pts, T)
    raise ConfigError(f"unknown curve kind {kind!r}")


def run_check(spec: dict, default_seed: int = 0, base_dir=".") -> tc.CheckReport:
    name = spec.get("name")
    if name not in CHECKS:
        raise ConfigError(f"unknown check {name!r}; choose from {CHECKS}")
    rng = make_rng(int(spec.get("seed", default_seed)))
    corrupt = spec.get("corrupt")
    if corrupt not in (None, "retraction", "subgradient"):
        raise ConfigError(f"unknown corruption {corrupt!r}")
    if name == "retraction_axioms":
        try:
            man = manifold_from_dict(spec["manifold"])
        except KeyError:
            raise ConfigError("retraction_axioms needs 'manifold'") from None
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        retract = tc.ScaledRetraction(man, float(spec.get("scale", 1.1))) if corrupt == "retraction" else None
        return tc.check_retraction_axioms(man, int(spec.get("n_points", 5)), int(spec.get("n_dirs", 3)), rng,
                                          retract=retract)
    if "objective" not in spec:
        raise ConfigError(f"{name} needs 'objective'")
    obj = build_objective(spec["objective"], base_dir, wrong_sign=corrupt == "subgradient")
    if name == "chain_rule":
        return tc.check_chain_rule(obj, _curve(spec.get("curve", {}), obj.manifold, rng),
                                   float(spec.get("tol", 1e-5)))
    if name == "loop_integral":
        return tc.check_loop_integral(obj, _curve(dict(spec.get("curve", {}), kind="loop"), obj.manifold, rng))
    if name == "grad_ae":
        return tc.check_grad_ae(obj, int(spec.get("n_points", 20)), rng)
    return tc.check_lipschitz_gradient_outside_ball(obj, float(spec.get("R", 0.0)), int(spec.get("n_pairs", 50)), rng)


def cmd_check(args) -> int:
    specs, seed, corrupt, out = None, 0, None, None
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        specs = data.get("checks")
        seed = int(data.get("seed", 0))
        corrupt = data.get("corrupt")
        out = data.get("output_dir")
        if out:
            out = Path(args.config).parent / out
    if args.seed is not None:
        seed = args.seed
    root = output_root(args, out) / "checks"
    if specs is None:
        if corrupt not in (None, "retraction", "subgradient"):
            raise ConfigError(f"unknown corruption {corrupt!r}")
        reports = tc.default_suite(seed, corrupt)
    else:
        if not specs:
            raise ConfigError("empty check list")
        reports = [run_check(s, seed, Path(args.config).parent) for s in specs]  # validation errors abort before writing
    root.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(reports):
        _dump_json(root / f"{i:02d}_{r.name}.json", r.to_dict())
        print(r.summary())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


# -- instance generation -------------------------------------------------------


def _parse_kv(items) -> dict:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def generate(spec: dict, out_dir: Path, force: bool = False) -> Path:
    """Write a reproducible problem instance; returns the metadata/data path."""
    kind = spec.get("kind")
    seed = _int(spec, "seed", 0, 0)
    try:
        if kind == "sparse_pca":
            n = _int(spec, "n")
            A = random_sparse_pca_matrix(n, seed)
            meta = {"kind": kind, "n": n, "seed": seed, "scaling": "N(0,1)/sqrt(n)"}
            return save_instance(out_dir, f"sparse_pca_n{n}_seed{seed}", meta, A, force)
        if kind in ("matrix_completion", "completion"):
            m, n = _int(spec, "m", spec.get("n")), _int(spec, "n")
            rank = _int(spec, "rank")
            A = random_completion_matrix(m, n, rank, seed)
            meta = {"kind": "matrix_completion", "m": m, "n": n, "rank": rank, "seed": seed,
                    "preprocessing": "gaussian, truncated SVD to rank, unit Frobenius norm"}
            return save_instance(out_dir, f"matrix_completion_{m}x{n}_r{rank}_seed{seed}", meta, A, force)
        if kind == "libsvm":
            N, d = _int(spec, "N", 64), _int(spec, "d", 14)
            path = out_dir / f"synthetic_N{N}_d{d}_seed{seed}.libsvm"
            if path.exists() and not force:
                raise FileExistsError(f"{path} already exists")
            out_dir.mkdir(parents=True, exist_ok=True)
            write_libsvm(synthetic_regression(N, d, seed), path)
            return path
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown instance kind {kind!r}")


def cmd_gen(args) -> int:
    spec = {}
    if args.config:
        try:
            spec = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read spec {args.config}: {exc}") from exc
    if args.kind:
        spec["kind"] = args.kind
    spec.update(_parse_kv(args.params))
    if args.seed is not None:
        spec["seed"] = args.seed
    try:
        root = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, ".")) / "instances"
        path = generate(spec, root, args.force)
    except FileExistsError as exc:
        print(f"error: {exc} (use --force to overwrite)", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON config file")
        p.add_argument("--out", help=f"output root (default: config output_dir, ${OUTPUT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--workers", type=int, default=1, help="concurrent runs")
        p.add_argument("--force", action="store_true", help="overwrite existing files")

    common(sub.add_parser("run", help="run one experiment (n_runs repetitions)"))
    common(sub.add_parser("sweep", help="run every schedule of a grid"))
    common(sub.add_parser("check", help="run numerical verifiers"), config_required=False)
    gen = sub.add_parser("gen", help="generate a problem instance")
    common(gen, config_required=False)
    gen.add_argument("kind", nargs="?", help="sparse_pca | completion | libsvm")
    gen.add_argument("params", nargs="*", help="key=value parameters, e.g. n=100 seed=7")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "gen": cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
