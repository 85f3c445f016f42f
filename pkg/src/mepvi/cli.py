"""Command-line front end.

    mepvi fit|diagnose|continual --config PATH [--seed N] [--out DIR] [--timing]

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import continual as cont
from .diagnostics import (
    GridDensity,
    elbo_estimate,
    kl_vs_target,
    taylor_gap,
    temperature_kl_report,
    cornercase_decomposition_check,
)
from .errors import ConfigError
from .pursuit import PursuitConfig, run_pursuit, trace_to_csv
from .targets import TARGETS, build_target
from .variational import GaussianComponent, MixtureApprox, mixture_to_json

DIAGNOSTICS_COLUMNS = ("check", "parameter", "lhs", "rhs", "diff")


@dataclass
class TargetSpec:
    name: str
    parameters: dict = field(default_factory=dict)


@dataclass
class DiagnosticsConfig:
    temperature: bool = True
    cornercase: bool = True
    taylor: bool = True
    box: list[list[float]] | None = None
    resolution: int | None = None
    lambdas: tuple[float, ...] = (0.5, 1.0, 2.0)
    alphas: tuple[float, ...] = (0.1, 0.01, 0.001)
    cornercase_samples: int = 1000
    # fixture for the Taylor-gap and corner-case rows, applied per coordinate
    q_mean: float = 0.0
    q_std: float = 2.0
    h_mean: float = 0.5
    h_std: float = 1.0

    def __post_init__(self):
        self.lambdas = tuple(self.lambdas)
        self.alphas = tuple(self.alphas)
        if self.resolution is not None and self.resolution < 101:
            raise ConfigError("resolution", "must be >= 101")
        if any(not lam > 0 for lam in self.lambdas):
            raise ConfigError("lambdas", "values must be > 0")
        if any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas", "values must lie in (0, 1)")
        if self.cornercase_samples < 1:
            raise ConfigError("cornercase_samples", "must be >= 1")
        if not (self.q_std > 0 and self.h_std > 0):
            raise ConfigError("q_std", "standard deviations must be > 0")


@dataclass
class ContinualConfig:
    data_dir: str | None = None
    class_pairs: list[list[int]] | None = None
    pca_dim: int = 16
    ensemble_n: int = 32
    synthetic_per_class: int = 200

    def __post_init__(self):
        for key in ("pca_dim", "ensemble_n", "synthetic_per_class"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")


@dataclass
class RunConfig:
    target: TargetSpec | None = None
    pursuit: PursuitConfig = field(default_factory=PursuitConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    continual: ContinualConfig = field(default_factory=ContinualConfig)
    output_dir: str = "out"
    seed: int = 0


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _coerce(value, tp, path):
    origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _coerce(value, inner, path)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected an object, got {value!r}")
        return dict(value)
    if origin in (list, tuple):
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        item_tp = args[0]
        items = [_coerce(v, item_tp, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    raise TypeError(f"unsupported config type {tp!r} at {path}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(_join(path, key), "unknown key")
    kwargs = {k: _coerce(v, hints[k], _join(path, k)) for k, v in data.items()}
    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in kwargs and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(_join(path, missing[0]), "required key missing")
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(_join(path, exc.key), str(exc).split(": ", 1)[-1]) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    if isinstance(doc, dict) and isinstance(doc.get("pursuit"), dict) and "seed" in doc["pursuit"]:
        raise ConfigError("pursuit.seed", "set the top-level seed instead")
    cfg = _build(RunConfig, doc, "")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")
    cfg.pursuit = dataclasses.replace(cfg.pursuit, seed=cfg.seed)
    if cfg.target is not None:
        if cfg.target.name not in TARGETS:
            raise ConfigError("target.name", f"unknown target {cfg.target.name!r}; choose from {sorted(TARGETS)}")
        try:
            build_target(cfg.target.name, cfg.target.parameters)
        except (TypeError, ValueError) as exc:
            raise ConfigError("target.parameters", str(exc)) from None
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    doc = json.loads(json.dumps(dataclasses.asdict(cfg)))
    doc["pursuit"].pop("seed")
    if doc["target"] is None:
        doc.pop("target")
    return doc


def _apply_overrides(cfg: RunConfig, seed, out) -> RunConfig:
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        cfg.seed = seed
        cfg.pursuit = dataclasses.replace(cfg.pursuit, seed=seed)
    if out is not None:
        cfg.output_dir = out
    return cfg


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output_dir", f"cannot create {out}: {exc}") from None
    return out


def _require_target(cfg: RunConfig):
    if cfg.target is None:
        raise ConfigError("target", "required key missing")
    return build_target(cfg.target.name, cfg.target.parameters)


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_fit(cfg: RunConfig, timing: bool = False) -> int:
    target = _require_target(cfg)
    out = _output_dir(cfg)
    trace = run_pursuit(target, cfg.pursuit)
    q = trace.mixture
    elbo, se = elbo_estimate(q, target, cfg.pursuit.elbo_eval_samples, np.random.default_rng((cfg.seed, 2)))
    summary = {
        "target": cfg.target.name,
        "component_count": q.n_components,
        "final_elbo": elbo,
        "final_elbo_se": se,
    }
    if target.log_normalizer is not None:
        summary["kl_monte_carlo"] = target.log_normalizer - elbo
        if target.dim <= 2 and target.support_box is not None:
            summary["kl_quadrature"] = kl_vs_target(q, target)
    (out / "trace.csv").write_text(trace_to_csv(trace, timing=timing))
    (out / "mixture.json").write_text(mixture_to_json(q) + "\n")
    _write_json(out / "summary.json", summary)
    return 0


def _diag_fixture(cfg: DiagnosticsConfig, dim):
    q_t = MixtureApprox.single(GaussianComponent(np.full(dim, cfg.q_mean), np.full(dim, np.log(cfg.q_std))))
    h = GaussianComponent(np.full(dim, cfg.h_mean), np.full(dim, np.log(cfg.h_std)))
    return q_t, h


def cmd_diagnose(cfg: RunConfig, timing: bool = False) -> int:
    target = _require_target(cfg)
    out = _output_dir(cfg)
    dcfg = cfg.diagnostics
    box = dcfg.box if dcfg.box is not None else target.support_box
    resolution = dcfg.resolution or (20001 if target.dim == 1 else 1001)
    if (dcfg.temperature or dcfg.taylor) and (target.dim > 2 or box is None):
        raise ConfigError("diagnostics.box", "grid diagnostics need a target of dimension <= 2 and a box")
    if box is not None and len(box) != target.dim:
        raise ConfigError("diagnostics.box", f"needs {target.dim} (low, high) pairs")
    q_t, h = _diag_fixture(dcfg, target.dim)
    rows = []
    if dcfg.temperature:
        p = GridDensity.from_log_density(target.log_density, box, resolution)
        for lam, kl_tempered, kl_base in temperature_kl_report(p, dcfg.lambdas):
            rows.append(("temperature", lam, kl_tempered, kl_base, kl_tempered - kl_base))
    if dcfg.taylor:
        for a, delta, model, ratio in taylor_gap(target, q_t, h, dcfg.alphas, box, resolution):
            rows.append(("taylor_gap", a, delta, model, ratio))
    if dcfg.cornercase:
        lhs, rhs, diff = cornercase_decomposition_check(h, target, q_t, dcfg.cornercase_samples,
                                                        np.random.default_rng(cfg.seed))
        rows.append(("cornercase", dcfg.cornercase_samples, lhs, rhs, diff))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DIAGNOSTICS_COLUMNS)
    for check, param, lhs, rhs, diff in rows:
        writer.writerow([check, repr(param), repr(float(lhs)), repr(float(rhs)), repr(float(diff))])
    (out / "diagnostics.csv").write_text(buf.getvalue())
    return 0


def _continual_tasks(cfg: RunConfig):
    ccfg = cfg.continual
    if ccfg.data_dir is not None:
        train, test = cont.load_mnist(ccfg.data_dir)
        pairs = ccfg.class_pairs or cont.MNIST_CLASS_PAIRS
    else:
        train, test = cont.synthetic_task_data(ccfg.synthetic_per_class, ccfg.synthetic_per_class, seed=cfg.seed)
        pairs = ccfg.class_pairs or cont.SYNTHETIC_CLASS_PAIRS
    tasks = cont.split_tasks(train, test, pairs)
    if ccfg.pca_dim < train.n_features:
        # basis frozen from the first stage's training data
        _, basis = cont.reduce_features(tasks.stages[0][0], ccfg.pca_dim)
        train = basis.apply(train)
        test = basis.apply(test)
        tasks = cont.split_tasks(train, test, pairs)
    return tasks


def accuracy_csv(results: dict, n_stages: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "method", "mean_acc"] + [f"acc_stage_{j}" for j in range(n_stages)])
    for row_idx in range(n_stages):
        for method, result in results.items():
            r = result.rows[row_idx]
            cells = [repr(a) for a in r.per_stage] + [""] * (n_stages - len(r.per_stage))
            writer.writerow([r.stage, method, repr(r.mean_acc)] + cells)
    return buf.getvalue()


def cmd_continual(cfg: RunConfig, timing: bool = False) -> int:
    out = _output_dir(cfg)
    tasks = _continual_tasks(cfg)
    pursuit = cont.continual_run(tasks, cfg.pursuit, cfg.continual.ensemble_n)
    naive = cont.naive_sequential_map(tasks)
    (out / "accuracy.csv").write_text(
        accuracy_csv({"pursuit": pursuit, "naive_map": naive}, tasks.n_stages))
    for k, q in enumerate(pursuit.posteriors):
        (out / f"stage_{k}_mixture.json").write_text(mixture_to_json(q) + "\n")
    return 0


COMMANDS = {"fit": cmd_fit, "diagnose": cmd_diagnose, "continual": cmd_continual}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mepvi", description="MaxEnt pursuit variational inference")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", default=None, help="override the configured output directory")
    parser.add_argument("--timing", action="store_true",
                        help="record wall-clock times in trace.csv (breaks byte-for-byte reproducibility)")
    args = parser.parse_args(argv)
    try:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {args.config}: {exc}") from None
        cfg = _apply_overrides(parse_config(text), args.seed, args.out)
        return COMMANDS[args.command](cfg, timing=args.timing)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
