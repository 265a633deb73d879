"""Command-line interface.

Subcommands: ``build-adapter`` (one-time adapter construction from a
weight checkpoint), ``run``/``sweep`` (the two-task protocol over a JSON
config, CSV + JSON results, checkpoints for later inspection),
``heatmap`` (input-Jacobian drift field of a finished run) and
``curvature`` (worst-direction forgetting sweep per update family).

Exit codes: 0 ok, 2 file-format error, 3 contract violation, 4 every
seed of a run failed.  All outputs are written atomically and are
deterministic under identical flags, config and inputs; the worker
count (env ``PLATE_THREADS``) never changes results.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import itertools
import json
import os
import sys
import time

import numpy as np

from . import bench
from .adapters import FullFineTune, plate_init, save_adapter
from .checkpoint import atomic_write_text, load_checkpoint
from .errors import ContractViolationError, FormatError, PlateError
from .geometry import (
    drift_radius,
    jacobian_drift_field,
    loss_beta,
    restricted_curvature,
    subspace_basis,
    worst_direction_sweep,
)
from .model import TrainConfig, load_model, merged_copy, params_to_vector, save_model

EXIT_OK = 0
EXIT_FORMAT = 2
EXIT_CONTRACT = 3
EXIT_ALL_FAILED = 4

CSV_COLUMNS = [
    "method", "r", "tau", "k", "seed", "trainable_params",
    "acc1_base", "acc2", "acc1_after", "forgetting", "epsilon", "lambda",
]


def _workers() -> int:
    raw = os.environ.get("PLATE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ContractViolationError(f"PLATE_THREADS must be an integer, got {raw!r}")


# ---------------------------------------------------------------------------
# config schema


def _require_keys(section: dict, allowed: dict, path: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ContractViolationError(f"unknown config key {path}.{unknown[0]}")
    for key, types in allowed.items():
        if key in section and not isinstance(section[key], types):
            raise ContractViolationError(f"config key {path}.{key} has wrong type")


_TASK_KEYS = {
    "kind": str, "n_train": int, "n_test": int, "noise": (int, float),
    "rotation_deg": (int, float), "translation": list, "d": int,
    "alpha": (int, float), "num_classes": int, "center_scale": (int, float),
    "intrinsic_dim": int, "ambient_noise": (int, float),
    "images_path": str, "labels_path": str,
    "test_images_path": str, "test_labels_path": str,
}
_ARCH_KEYS = {"hidden": list, "activation": str}
_STAGE_KEYS = {
    "epochs": int, "batch_size": int, "learning_rate": (int, float),
    "optimizer": str, "weight_decay": (int, float), "loss": str,
}
_METHOD_KEYS = {"kind": str, "r": (int, list), "tau": (int, float, list),
                "k_max": (int, list), "rho": (int, float, list)}
_METRICS_KEYS = {"epsilon": bool, "lambda": bool, "max_samples": int,
                 "power_iters": int, "tol": (int, float)}
_TOP_KEYS = {"task": dict, "arch": dict, "stage1": dict, "stage2": dict,
             "methods": list, "seeds": list, "metrics": dict, "srht": str,
             "save_checkpoints": bool}


def _parse_task(section: dict) -> bench.TaskSpec:
    _require_keys(section, _TASK_KEYS, "task")
    if "kind" not in section:
        raise ContractViolationError("task.kind is required")
    fields = dict(section)
    if "translation" in fields:
        fields["translation"] = tuple(float(v) for v in fields["translation"])
    return bench.TaskSpec(**fields)


def _parse_arch(section: dict) -> bench.ArchSpec:
    _require_keys(section, _ARCH_KEYS, "arch")
    if "hidden" not in section or "activation" not in section:
        raise ContractViolationError("arch.hidden and arch.activation are required")
    return bench.ArchSpec(hidden=tuple(int(h) for h in section["hidden"]),
                          activation=section["activation"])


def _parse_stage(section: dict, name: str, default_loss: str) -> TrainConfig:
    _require_keys(section, _STAGE_KEYS, name)
    for key in ("epochs", "batch_size", "learning_rate"):
        if key not in section:
            raise ContractViolationError(f"{name}.{key} is required")
    return TrainConfig(
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        learning_rate=float(section["learning_rate"]),
        optimizer=section.get("optimizer", "adam"),
        weight_decay=float(section.get("weight_decay", 0.0)),
        loss=section.get("loss", default_loss),
    )


def _expand_methods(entries: list) -> list:
    methods = []
    for i, section in enumerate(entries):
        if not isinstance(section, dict):
            raise ContractViolationError(f"methods[{i}] must be an object")
        _require_keys(section, _METHOD_KEYS, f"methods[{i}]")
        kind = section.get("kind")
        if kind not in ("full", "lora", "plate", "frozen"):
            raise ContractViolationError(f"methods[{i}].kind must be full|lora|plate|frozen")
        grids = []
        for key, default in (("r", 0), ("tau", 0.0), ("k_max", 512), ("rho", 0.5)):
            value = section.get(key, default)
            grids.append(value if isinstance(value, list) else [value])
        for r, tau, k_max, rho in itertools.product(*grids):
            methods.append(bench.MethodSpec(kind=kind, r=int(r), tau=float(tau),
                                            k_max=int(k_max), rho=float(rho)))
    if not methods:
        raise ContractViolationError("config needs at least one method")
    return methods


def parse_config(raw: dict):
    """Validate a run/sweep config; returns (list of ProtocolConfig, extras)."""
    if not isinstance(raw, dict):
        raise ContractViolationError("config root must be an object")
    _require_keys(raw, _TOP_KEYS, "config")
    for key in ("task", "arch", "stage1", "stage2", "methods", "seeds"):
        if key not in raw:
            raise ContractViolationError(f"config.{key} is required")
    task = _parse_task(raw["task"])
    arch = _parse_arch(raw["arch"])
    default_loss = "softmax_cross_entropy" if task.kind != "rotated_regression" else "mse"
    stage1 = _parse_stage(raw["stage1"], "stage1", default_loss)
    stage2 = _parse_stage(raw["stage2"], "stage2", default_loss)
    seeds = tuple(int(s) for s in raw["seeds"])
    if not seeds:
        raise ContractViolationError("config.seeds must be nonempty")
    metrics_section = raw.get("metrics", {})
    _require_keys(metrics_section, _METRICS_KEYS, "metrics")
    metrics = bench.MetricsConfig(
        epsilon=metrics_section.get("epsilon", False),
        lamda=metrics_section.get("lambda", False),
        max_samples=metrics_section.get("max_samples", 1024),
        power_iters=metrics_section.get("power_iters", 200),
        tol=float(metrics_section.get("tol", 1e-7)),
    )
    srht = raw.get("srht", "auto")
    if srht not in ("auto", "on", "off"):
        raise ContractViolationError("config.srht must be auto|on|off")
    configs = [
        bench.ProtocolConfig(task=task, arch=arch, stage1=stage1, stage2=stage2,
                             method=m, seeds=seeds, metrics=metrics, srht=srht)
        for m in _expand_methods(raw["methods"])
    ]
    return configs, {"save_checkpoints": raw.get("save_checkpoints", True)}


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}")


# ---------------------------------------------------------------------------
# results serialization


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_results_csv(path: str, results: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        d = r.to_dict()
        writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])
    atomic_write_text(path, buf.getvalue())


def _write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run / sweep


def _save_run_artifacts(out_dir, config, seed, stage1, model, adapters, save_checkpoints):
    if not save_checkpoints:
        return
    stage1_dir = os.path.join(out_dir, "stage1", f"seed{seed}", "theta0")
    if not os.path.isfile(os.path.join(stage1_dir, "manifest.json")):
        save_model(stage1_dir, stage1.model)
    tag = config.method.tag()
    run_dir = os.path.join(out_dir, "runs", tag, f"seed{seed}")
    save_model(os.path.join(run_dir, "theta1"), merged_copy(model, adapters))
    adapter_dirs = []
    if config.method.kind in ("plate", "lora"):
        for idx, adapter in enumerate(adapters):
            d = os.path.join(run_dir, "adapters", str(idx))
            save_adapter(d, adapter)
            adapter_dirs.append(os.path.relpath(d, run_dir))
    run_meta = {
        "theta0": os.path.relpath(stage1_dir, run_dir),
        "theta1": "theta1",
        "adapters": adapter_dirs,
        "seed": seed,
        "task": bench_task_dict(config.task),
        "arch": {"hidden": list(config.arch.hidden), "activation": config.arch.activation},
        "method": method_dict(config.method),
        "loss": config.stage2.loss,
        "srht": config.srht,
        "metrics": {"max_samples": config.metrics.max_samples},
    }
    atomic_write_text(os.path.join(run_dir, "run.json"),
                      json.dumps(run_meta, indent=2, sort_keys=True) + "\n")


def bench_task_dict(task: bench.TaskSpec) -> dict:
    return {
        "kind": task.kind, "n_train": task.n_train, "n_test": task.n_test,
        "noise": task.noise, "rotation_deg": task.rotation_deg,
        "translation": list(task.translation), "d": task.d, "alpha": task.alpha,
        "num_classes": task.num_classes, "center_scale": task.center_scale,
        "images_path": task.images_path, "labels_path": task.labels_path,
        "test_images_path": task.test_images_path, "test_labels_path": task.test_labels_path,
    }


def method_dict(m: bench.MethodSpec) -> dict:
    return {"kind": m.kind, "r": m.r, "tau": m.tau, "k_max": m.k_max, "rho": m.rho}


def cmd_run(args) -> int:
    raw = _load_config_file(args.config)
    configs, extras = parse_config(raw)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    # stage 1 first: unique fingerprints, shared across the whole grid
    stage1_cache: dict = {}
    stage1_jobs = []
    for config in configs:
        for seed in config.seeds:
            key = bench.stage1_fingerprint(config, seed)
            if key not in stage1_cache:
                stage1_cache[key] = None
                stage1_jobs.append((key, config, seed))
    workers = _workers()

    def _stage1(job):
        key, config, seed = job
        return key, bench.run_stage1(config, seed)

    if workers > 1 and len(stage1_jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            for key, art in pool.map(_stage1, stage1_jobs):
                stage1_cache[key] = art
    else:
        for job in stage1_jobs:
            key, art = _stage1(job)
            stage1_cache[key] = art

    cells = [(ci, config, seed) for ci, config in enumerate(configs) for seed in config.seeds]

    def _stage2(cell):
        ci, config, seed = cell
        start = time.perf_counter()
        stage1 = stage1_cache[bench.stage1_fingerprint(config, seed)]
        try:
            outcome = bench.run_stage2(config, seed, stage1)
            _save_run_artifacts(out_dir, config, seed, stage1, outcome.model,
                                outcome.adapters, extras["save_checkpoints"])
            return ci, seed, outcome.result, None, time.perf_counter() - start
        except Exception as exc:  # noqa: BLE001 - per-seed isolation is the contract
            failure = bench.RunFailure(method=config.method, seed=seed,
                                       error=f"{type(exc).__name__}: {exc}")
            return ci, seed, None, failure, time.perf_counter() - start

    if workers > 1 and len(cells) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_stage2, cells))
    else:
        outcomes = [_stage2(cell) for cell in cells]

    outcomes.sort(key=lambda o: (o[0], o[1]))
    results = [o[2] for o in outcomes if o[2] is not None]
    failures = [o[3] for o in outcomes if o[3] is not None]
    timings = {f"{configs[o[0]].method.tag()}/seed{o[1]}": o[4] for o in outcomes}

    _write_results_csv(os.path.join(out_dir, "results.csv"), results)
    payload = {
        "results": [r.to_dict() for r in results],
        "failures": [{"method": f.method.tag(), "seed": f.seed, "error": f.error} for f in failures],
        "aggregates": bench.aggregate(results),
        "wall_seconds": timings,
        "config": raw,
    }
    _write_json(os.path.join(out_dir, "results.json"), payload)
    if results:
        return EXIT_OK
    return EXIT_ALL_FAILED


# ---------------------------------------------------------------------------
# build-adapter


def cmd_build_adapter(args) -> int:
    tensors, _ = load_checkpoint(args.weights)
    two_d = {k: v for k, v in tensors.items() if v.ndim == 2}
    if args.tensor:
        if args.tensor not in two_d:
            raise ContractViolationError(f"tensor {args.tensor!r} not found in {args.weights}")
        weight = two_d[args.tensor]
    elif len(two_d) == 1:
        weight = next(iter(two_d.values()))
    else:
        raise ContractViolationError(
            f"{args.weights} holds {len(two_d)} matrices; pick one with --tensor"
        )
    adapter = plate_init(weight, r=args.r, tau=args.tau, k_max=args.kmax,
                         rho=args.rho, seed=args.seed, srht=args.srht)
    save_adapter(os.path.join(args.out, "adapter"), adapter)
    hist_counts, hist_edges = np.histogram(adapter.selector.scores, bins=10)
    summary = {
        "d_out": adapter.selector.d_out,
        "d_in": adapter.basis.vectors.shape[0],
        "r": adapter.r,
        "k": adapter.k,
        "tau": adapter.basis.tau,
        "rho": adapter.rho,
        "energy_captured": adapter.basis.energy_captured,
        "selected_indices": [int(i) for i in adapter.selector.indices],
        "score_histogram": {
            "counts": [int(c) for c in hist_counts],
            "edges": [float(e) for e in hist_edges],
        },
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return EXIT_OK


# ---------------------------------------------------------------------------
# heatmap / curvature over a finished run


def _load_run(run_dir: str):
    path = os.path.join(run_dir, "run.json")
    if not os.path.isfile(path):
        raise FormatError(f"no run.json in {run_dir}")
    with open(path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    theta0_model = load_model(os.path.join(run_dir, meta["theta0"]))
    theta1_model = load_model(os.path.join(run_dir, meta["theta1"]))
    return meta, theta0_model, theta1_model


def cmd_heatmap(args) -> int:
    meta, m0, m1 = _load_run(args.run)
    if m0.input_dim != 2:
        raise ContractViolationError(
            f"heatmap needs a 2-D-input model, got input dim {m0.input_dim}"
        )
    xs = np.linspace(args.grid[0], args.grid[1], int(args.grid[4]))
    ys = np.linspace(args.grid[2], args.grid[3], int(args.grid[4]))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    theta0 = params_to_vector(m0).data
    theta1 = params_to_vector(m1).data
    field = jacobian_drift_field(m0, "task1", theta0, theta1, points)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "delta"])
    for p, d in zip(points, field):
        writer.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(d))])
    atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_curvature(args) -> int:
    meta, m0, _ = _load_run(args.run)
    task = bench.TaskSpec(**{**meta["task"], "translation": tuple(meta["task"]["translation"])})
    seed = int(meta["seed"])
    method = bench.MethodSpec(**meta["method"])
    loss = meta["loss"]
    family = args.family
    if family in ("plate", "lora") and method.kind != family:
        raise ContractViolationError(
            f"run was trained with method {method.kind!r}; family {family!r} unavailable"
        )
    _, te1, _, _ = bench.make_task_pair(task, seed)
    max_samples = int(meta.get("metrics", {}).get("max_samples", 1024))
    x = te1.inputs[:max_samples]
    y = te1.targets[:max_samples]
    theta0 = params_to_vector(m0).data
    if family == "full":
        adapters = [FullFineTune()] * len(m0.layers)
        sub = subspace_basis(m0, adapters, "full")
    else:
        adapters = bench.build_adapters(m0, method, seed, meta.get("srht", "auto"))
        sub = subspace_basis(m0, adapters, "plate" if family == "plate" else "lora_tangent")
    curv = restricted_curvature(m0, "task1", theta0, sub, x, y, loss, seed=seed)
    drift = drift_radius(m0, "task1", theta0, sub, x, seed=seed)
    rhos = [float(v) for v in args.rhos.split(",") if v != ""]
    sweep_res = worst_direction_sweep(m0, "task1", theta0, curv.top_direction, x, y, loss, rhos)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rho", "forgetting"])
    for rho, f in sweep_res.rows:
        writer.writerow([repr(float(rho)), repr(float(f))])
    atomic_write_text(args.out, buf.getvalue())
    sidecar = {
        "family": family,
        "lambda": curv.lambda_s,
        "epsilon": drift.epsilon,
        "beta": loss_beta(loss),
        "quad_coeff": sweep_res.quad_coeff,
        "samples_used": curv.samples_used,
    }
    _write_json(args.out + ".json", sidecar)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-adapter", help="construct an adapter from a weight checkpoint")
    p.add_argument("--weights", required=True)
    p.add_argument("--tensor", default=None)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--kmax", type=int, default=512)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--srht", choices=["auto", "on", "off"], default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_adapter)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help="execute the two-task protocol over a config grid")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("heatmap", help="input-Jacobian drift field of a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--grid", nargs=5, type=float, required=True,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX", "STEPS"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("curvature", help="worst-direction forgetting sweep of a family")
    p.add_argument("--run", required=True)
    p.add_argument("--family", choices=["plate", "lora", "full"], required=True)
    p.add_argument("--rhos", required=True, help="comma-separated step sizes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_curvature)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ContractViolationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except PlateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def console_main() -> None:
    sys.exit(main())
