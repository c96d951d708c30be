"""Command-line entry point: `optlab generate|train|oracle|tune|experiment`.

Every command takes long-form flags, or `--config FILE` with the same keys
(flags override file values), and is deterministic: identical configuration
produces byte-identical output files.  Exit codes: 0 ok, 1 usage error,
2 numerical failure (divergence, singular systems), 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lsq, oracle
from .errors import (
    AllTrialsDivergedError,
    DataGenerationError,
    DivergedError,
    LemmaPreconditionError,
    OptlabError,
    SingularKernelError,
    SingularPreconditionerError,
)
from .optim import ADAPTIVE_METHODS, MethodKind, OptimizerSpec
from .schedules import DecayPolicy
from .training import dev_labels_for, run_training, write_trace_csv
from .tune import make_log_grid, tune, tune_report_to_document

__all__ = ["main", "run_experiment", "ExperimentConfig", "EXIT_OK", "EXIT_USAGE",
           "EXIT_NUMERICAL", "EXIT_IO"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

ALL_METHODS = tuple(m.value for m in MethodKind)

# Spawn keys carving independent RNG streams out of one experiment seed.
_TEST_STREAM = 101
_DEV_STREAM = 202


class _Parser(argparse.ArgumentParser):
    """argparse that exits with the usage code instead of 2."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value)!r}")


def _write_json(doc: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _spec_document(spec: OptimizerSpec) -> dict:
    return {
        "method": spec.method.value,
        "alpha": spec.alpha,
        "beta": spec.beta,
        "beta1": spec.beta1,
        "beta2": spec.beta2,
        "epsilon": spec.epsilon,
        "g_init": spec.g_init,
    }


def _policy_from(options: dict) -> DecayPolicy:
    kind = options.get("decay") or "none"
    if kind == "fixed_decay":
        return DecayPolicy(kind=kind, delta=options.get("delta", 0.9),
                           period=options.get("period") or 10)
    if kind == "dev_decay":
        return DecayPolicy(kind=kind, delta=options.get("delta", 0.9))
    return DecayPolicy(kind="none")


def _merge_options(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_values = json.load(fh)
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

GENERATE_DEFAULTS = dict(n=100, p=0.75, seed=1, out="dataset.json")


def cmd_generate(options: dict) -> int:
    ds = lsq.generate_synthetic(int(options["n"]), float(options["p"]), int(options["seed"]))
    out = Path(options["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    lsq.save_dataset(ds, out)
    print(
        f"wrote {out}: n={ds.n} d={ds.d} n_pos={ds.n_pos} n_neg={ds.n_neg} "
        f"label_sum={ds.label_sum} rejections={ds.rejections}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = dict(
    dataset="dataset.json",
    method="sgd",
    alpha=0.1,
    beta=0.9,
    beta1=0.9,
    beta2=0.999,
    epsilon=1e-8,
    g_init=0.0,
    iters=1000,
    seed=1,
    decay="none",
    delta=0.9,
    period=None,
    dev_size=2000,
    stop_loss=None,
    trace_every=None,
    out="run",
)


def cmd_train(options: dict) -> int:
    ds = lsq.load_dataset(options["dataset"])
    method = MethodKind.parse(options["method"])
    spec = OptimizerSpec(
        method=method,
        alpha=float(options["alpha"]),
        beta=float(options["beta"]),
        beta1=float(options["beta1"]),
        beta2=float(options["beta2"]),
        epsilon=float(options["epsilon"]),
        g_init=float(options["g_init"]),
    )
    policy = _policy_from(options)
    dev_labels = None
    if options["dev_size"] and ds.p is not None:
        ss = np.random.SeedSequence(entropy=int(options["seed"]), spawn_key=(_DEV_STREAM,))
        dev_labels = dev_labels_for(ds.p, int(options["dev_size"]), ss)
    result = run_training(
        ds,
        spec,
        int(options["iters"]),
        policy=policy,
        dev_labels=dev_labels,
        stop_loss=options["stop_loss"],
        trace_every=options["trace_every"],
    )
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(result.trace, out / "trace.csv")
    _write_json(
        {
            "spec": _spec_document(spec),
            "status": result.status,
            "converged": result.converged,
            "iterations": result.iterations,
            "final_train_loss": result.final_loss,
            "w": [float(v) for v in result.w],
        },
        out / "weights.json",
    )
    _write_json(
        {
            "options": {k: options[k] for k in sorted(options)},
            "status": result.status,
            "converged": result.converged,
            "iterations": result.iterations,
            "final_train_loss": result.final_loss,
            "failure": result.failure,
        },
        out / "run.json",
    )
    print(f"status={result.status} iterations={result.iterations} "
          f"final_train_loss={result.final_loss!r}")
    return EXIT_OK if result.status == "ok" else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

ORACLE_DEFAULTS = dict(dataset="dataset.json", out="oracle.json")


def _oracle_report(ds: lsq.Dataset) -> dict:
    mn = oracle.min_norm_solution(ds)
    report: dict = {
        "n": ds.n,
        "n_pos": ds.n_pos,
        "n_neg": ds.n_neg,
        "min_norm": oracle.solution_to_document(mn),
        "min_norm_margin": lsq.margin(ds, mn.w),
        "min_norm_loss": lsq.loss(ds, mn.w),
    }
    c = oracle.lemma_condition_check(ds)
    report["sign_available"] = c is not None
    if c is not None:
        sg = oracle.sign_solution(ds)
        report["sign"] = oracle.solution_to_document(sg)
        report["sign_margin"] = lsq.margin(ds, sg.w)
        report["sign_loss"] = lsq.loss(ds, sg.w)
    else:
        report["sign"] = None
    if ds.p is not None and ds.n_pos >= 1 and ds.n_neg >= 1:
        a_plus, a_minus = oracle.synthetic_alphas(ds.n_pos, ds.n_neg)
        e_plus, e_minus = oracle.exact_synthetic_alphas(ds.n_pos, ds.n_neg)
        report["closed_form_alphas"] = {"alpha_plus": a_plus, "alpha_minus": a_minus}
        report["exact_closed_form_alphas"] = {"alpha_plus": e_plus, "alpha_minus": e_minus}
        report["analytic_test_error"] = {
            "sign": oracle.analytic_test_error("sign", ds.p, ds.n_pos, ds.n_neg),
            "min_norm": oracle.analytic_test_error("min_norm", ds.p, ds.n_pos, ds.n_neg),
        }
    return report


def cmd_oracle(options: dict) -> int:
    ds = lsq.load_dataset(options["dataset"])
    report = _oracle_report(ds)
    out = Path(options["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report, out)
    c = report.get("sign", None)
    c_text = report["sign"]["c"] if c else "unavailable"
    print(f"wrote {out}: sign oracle c={c_text}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune
# ---------------------------------------------------------------------------

TUNE_DEFAULTS = dict(
    dataset="dataset.json",
    method="sgd",
    alpha=0.5,
    ratio=2.0,
    count=5,
    iters=2000,
    seeds=5,
    decay="none",
    delta=0.9,
    period=None,
    dev_size=2000,
    extension_cap=8,
    stop_loss=1e-12,
    workers=1,
    out="tune.json",
)


def cmd_tune(options: dict) -> int:
    ds = lsq.load_dataset(options["dataset"])
    method = MethodKind.parse(options["method"])
    grid = make_log_grid(float(options["alpha"]), float(options["ratio"]), int(options["count"]))
    policy = _policy_from(options)
    dev_size = options["dev_size"] if ds.p is not None else None
    report = tune(
        ds,
        method,
        grid,
        policy,
        int(options["iters"]),
        int(options["seeds"]),
        dev_size=dev_size,
        extension_cap=int(options["extension_cap"]),
        stop_loss=options["stop_loss"],
        workers=int(options["workers"]),
    )
    out = Path(options["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(tune_report_to_document(report), out)
    print(
        f"winner alpha={report.winner.alpha!r} metric={report.winner.metric_mean!r} "
        f"extensions={report.extensions}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

EXPERIMENT_DEFAULTS = dict(
    n=100,
    p=0.75,
    seed=1,
    seeds=5,
    iters=40000,
    m_test=20000,
    stop_loss=1e-12,
    grid_center=0.5,
    grid_ratio=2.0,
    grid_count=5,
    extension_cap=8,
    workers=1,
    methods=",".join(ALL_METHODS),
    out="experiment",
)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 100
    p: float = 0.75
    seed: int = 1
    seeds: int = 5
    iters: int = 40000
    m_test: int = 20000
    stop_loss: float = 1e-12
    grid_center: float = 0.5
    grid_ratio: float = 2.0
    grid_count: int = 5
    extension_cap: int = 8
    workers: int = 1
    methods: tuple[str, ...] = ALL_METHODS

    @classmethod
    def from_options(cls, options: dict) -> "ExperimentConfig":
        methods = options["methods"]
        if isinstance(methods, str):
            methods = tuple(m.strip() for m in methods.split(",") if m.strip())
        return cls(
            n=int(options["n"]),
            p=float(options["p"]),
            seed=int(options["seed"]),
            seeds=int(options["seeds"]),
            iters=int(options["iters"]),
            m_test=int(options["m_test"]),
            stop_loss=float(options["stop_loss"]),
            grid_center=float(options["grid_center"]),
            grid_ratio=float(options["grid_ratio"]),
            grid_count=int(options["grid_count"]),
            extension_cap=int(options["extension_cap"]),
            workers=int(options["workers"]),
            methods=tuple(methods),
        )


def base_spec_for(method: MethodKind) -> OptimizerSpec:
    """Experiment defaults: momentum 0.9; adaptive methods run exact
    (epsilon 0, zero accumulator) so their fixed point is the sign solution."""
    if method in (MethodKind.SGD, MethodKind.HB, MethodKind.NAG):
        return OptimizerSpec(method=method, alpha=1.0, beta=0.9)
    if method is MethodKind.RMSPROP:
        return OptimizerSpec(method=method, alpha=1.0, beta2=0.9, epsilon=0.0, g_init=0.0)
    return OptimizerSpec(method=method, alpha=1.0, beta1=0.9, beta2=0.999,
                         epsilon=0.0, g_init=0.0)


def _relative_distance(w: np.ndarray, target: np.ndarray) -> float:
    return float(np.linalg.norm(w - target) / np.linalg.norm(target))


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Tune and train every method, compare against both oracles, and write
    the summary documents.  Returns the summary dictionary."""
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "weights").mkdir(exist_ok=True)
    (out / "tune").mkdir(exist_ok=True)

    ds = lsq.generate_synthetic(cfg.n, cfg.p, cfg.seed)
    lsq.save_dataset(ds, out / "dataset.json")
    _write_json(_oracle_report(ds), out / "oracle.json")

    mn = oracle.min_norm_solution(ds)
    sg = oracle.sign_solution(ds)
    test_labels = dev_labels_for(
        cfg.p, cfg.m_test, np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_TEST_STREAM,))
    )
    precondition_ok = ds.n_pos > ds.n_neg / 3

    grid = make_log_grid(cfg.grid_center, cfg.grid_ratio, cfg.grid_count)
    policy = DecayPolicy(kind="none")
    rows = []
    for name in cfg.methods:
        method = MethodKind.parse(name)
        adaptive = method in ADAPTIVE_METHODS
        base = base_spec_for(method)
        report = tune(
            ds,
            method,
            grid,
            policy,
            cfg.iters,
            cfg.seeds,
            base_spec=base,
            dev_size=None,
            selection="train_loss",
            extension_cap=cfg.extension_cap,
            stop_loss=cfg.stop_loss,
            workers=cfg.workers,
        )
        _write_json(tune_report_to_document(report), out / "tune" / f"{method.value}.json")

        oracle_kind = "sign" if adaptive else "min_norm"
        analytic = oracle.analytic_test_error(oracle_kind, cfg.p, ds.n_pos, ds.n_neg)
        dev_labels = dev_labels_for(
            cfg.p, 2000, np.random.SeedSequence(entropy=cfg.seed, spawn_key=(_DEV_STREAM,))
        )
        final = run_training(
            ds,
            report.winner.spec,
            cfg.iters,
            dev_labels=dev_labels,
            stop_loss=cfg.stop_loss,
            analytic_bound=analytic,
        )
        write_trace_csv(final.trace, out / "traces" / f"{method.value}.csv")

        w = final.w
        scores = lsq.test_scores(w, test_labels)
        empirical = float(np.mean(scores * test_labels <= 0.0))
        dist_mn = _relative_distance(w, mn.w)
        dist_sg = _relative_distance(w, sg.w)
        w_l2 = float(np.linalg.norm(w))
        resid = lsq.row_span_residual(ds, w)
        trace_ratio = max(
            (r.rowspan_resid / (1.0 + r.w_l2) for r in final.trace), default=math.nan
        )
        if adaptive:
            verdict_gen = abs(empirical - (1.0 - cfg.p)) <= 0.02
            verdict_oracle = dist_sg <= 1e-4
        else:
            verdict_gen = empirical == 0.0
            verdict_oracle = dist_mn <= 1e-4

        _write_json(
            {
                "spec": _spec_document(report.winner.spec),
                "status": final.status,
                "converged": final.converged,
                "iterations": final.iterations,
                "final_train_loss": final.final_loss,
                "w": [float(v) for v in w],
            },
            out / "weights" / f"{method.value}.json",
        )
        rows.append(
            {
                "method": method.value,
                "family": "adaptive" if adaptive else "non_adaptive",
                "alpha": report.winner.alpha,
                "extensions": report.extensions,
                "status": final.status,
                "converged": final.converged,
                "iterations": final.iterations,
                "final_train_loss": final.final_loss,
                "dist_to_min_norm_rel": dist_mn,
                "dist_to_sign_rel": dist_sg,
                "empirical_test_error": empirical,
                "analytic_test_error": analytic,
                "margin_final": lsq.margin(ds, w) if w_l2 > 0 else math.nan,
                "rowspan_resid_final": resid,
                "rowspan_ratio_trace_max": trace_ratio,
                "w_l2": w_l2,
                "verdict_generalization": verdict_gen,
                "verdict_oracle_agreement": verdict_oracle,
            }
        )

    summary = {
        "config": {
            "n": cfg.n,
            "p": cfg.p,
            "seed": cfg.seed,
            "seeds": cfg.seeds,
            "iters": cfg.iters,
            "m_test": cfg.m_test,
            "stop_loss": cfg.stop_loss,
            "grid_center": cfg.grid_center,
            "grid_ratio": cfg.grid_ratio,
            "grid_count": cfg.grid_count,
            "extension_cap": cfg.extension_cap,
            "methods": list(cfg.methods),
        },
        "dataset": {
            "n": ds.n,
            "d": ds.d,
            "n_pos": ds.n_pos,
            "n_neg": ds.n_neg,
            "label_sum": ds.label_sum,
            "rejections": ds.rejections,
            "precondition_npos_gt_nneg_third": precondition_ok,
        },
        "oracles": {
            "c": sg.c,
            "tau": sg.tau,
            "min_norm_margin": lsq.margin(ds, mn.w),
            "sign_margin": lsq.margin(ds, sg.w),
            "alpha_plus_exact": mn.alpha_plus,
            "alpha_minus_exact": mn.alpha_minus,
        },
        "methods": rows,
    }
    _write_json(summary, out / "summary.json")

    csv_fields = [
        "method", "family", "alpha", "extensions", "status", "converged", "iterations",
        "final_train_loss", "dist_to_min_norm_rel", "dist_to_sign_rel",
        "empirical_test_error", "analytic_test_error", "margin_final",
        "rowspan_resid_final", "rowspan_ratio_trace_max", "w_l2",
        "verdict_generalization", "verdict_oracle_agreement",
    ]
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_fields)
        for row in rows:
            writer.writerow(
                [repr(row[f]) if isinstance(row[f], float) else row[f] for f in csv_fields]
            )
    return summary


def cmd_experiment(options: dict) -> int:
    cfg = ExperimentConfig.from_options(options)
    summary = run_experiment(cfg, options["out"])
    for row in summary["methods"]:
        print(
            f"{row['method']:>8}: alpha={row['alpha']!r} "
            f"loss={row['final_train_loss']:.3e} "
            f"test_err={row['empirical_test_error']:.4f} "
            f"(analytic {row['analytic_test_error']:.4f}) "
            f"gen={'pass' if row['verdict_generalization'] else 'FAIL'} "
            f"oracle={'pass' if row['verdict_oracle_agreement'] else 'FAIL'}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file with option values; flags override")


def build_parser() -> _Parser:
    parser = _Parser(prog="optlab", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="draw a synthetic dataset")
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    _add_common(g)

    t = subs.add_parser("train", help="run one optimizer on a dataset")
    t.add_argument("--dataset")
    t.add_argument("--method", choices=ALL_METHODS)
    t.add_argument("--alpha", type=float)
    t.add_argument("--beta", type=float)
    t.add_argument("--beta1", type=float)
    t.add_argument("--beta2", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--g-init", dest="g_init", type=float)
    t.add_argument("--iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--decay", choices=["none", "dev_decay", "fixed_decay"])
    t.add_argument("--delta", type=float)
    t.add_argument("--period", type=int)
    t.add_argument("--dev-size", dest="dev_size", type=int)
    t.add_argument("--stop-loss", dest="stop_loss", type=float)
    t.add_argument("--trace-every", dest="trace_every", type=int)
    t.add_argument("--out")
    _add_common(t)

    o = subs.add_parser("oracle", help="closed-form solutions for a dataset")
    o.add_argument("--dataset")
    o.add_argument("--out")
    _add_common(o)

    u = subs.add_parser("tune", help="step-size grid search")
    u.add_argument("--dataset")
    u.add_argument("--method", choices=ALL_METHODS)
    u.add_argument("--alpha", type=float, help="grid center")
    u.add_argument("--ratio", type=float)
    u.add_argument("--count", type=int)
    u.add_argument("--iters", type=int)
    u.add_argument("--seeds", type=int)
    u.add_argument("--decay", choices=["none", "dev_decay", "fixed_decay"])
    u.add_argument("--delta", type=float)
    u.add_argument("--period", type=int)
    u.add_argument("--dev-size", dest="dev_size", type=int)
    u.add_argument("--extension-cap", dest="extension_cap", type=int)
    u.add_argument("--stop-loss", dest="stop_loss", type=float)
    u.add_argument("--workers", type=int)
    u.add_argument("--out")
    _add_common(u)

    e = subs.add_parser("experiment", help="full tuned comparison of all methods")
    e.add_argument("--n", type=int)
    e.add_argument("--p", type=float)
    e.add_argument("--seed", type=int)
    e.add_argument("--seeds", type=int)
    e.add_argument("--iters", type=int)
    e.add_argument("--m-test", dest="m_test", type=int)
    e.add_argument("--stop-loss", dest="stop_loss", type=float)
    e.add_argument("--grid-center", dest="grid_center", type=float)
    e.add_argument("--grid-ratio", dest="grid_ratio", type=float)
    e.add_argument("--grid-count", dest="grid_count", type=int)
    e.add_argument("--extension-cap", dest="extension_cap", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--methods", help="comma-separated subset of methods")
    e.add_argument("--out")
    _add_common(e)

    return parser


_COMMANDS = {
    "generate": (GENERATE_DEFAULTS, cmd_generate),
    "train": (TRAIN_DEFAULTS, cmd_train),
    "oracle": (ORACLE_DEFAULTS, cmd_oracle),
    "tune": (TUNE_DEFAULTS, cmd_tune),
    "experiment": (EXPERIMENT_DEFAULTS, cmd_experiment),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits on usage errors and --help
        return int(exc.code or 0)
    defaults, handler = _COMMANDS[args.command]
    try:
        options = _merge_options(defaults, args)
        return handler(options)
    except (ValueError, LemmaPreconditionError) as exc:
        print(f"optlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DivergedError,
        SingularPreconditionerError,
        SingularKernelError,
        AllTrialsDivergedError,
        DataGenerationError,
    ) as exc:
        print(f"optlab: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OptlabError as exc:
        print(f"optlab: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"optlab: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
