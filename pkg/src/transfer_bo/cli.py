"""Experiment orchestration CLI.

Subcommands:
  transfer-bo run <config.toml>    seed x model x task grid with CSV traces
  transfer-bo verify [--scope ...] oracle suites, nonzero exit on failure
  transfer-bo timing <grid>        training-step timing sweep + slope table
  transfer-bo families list        available synthetic function families
"""

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

# Single-threaded BLAS: the workload is many small factorizations, where
# OpenBLAS threading is counterproductive; must be set before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._linalg import InputError
from .bo import BORunConfig, Domain, Objective, regret_metrics, run_bo
from .families import (
    Family,
    FamilyTask,
    alpine_benchmark_shifts,
    evaluate,
    generate_source_data,
    sample_task,
    target_task,
    true_minimum,
)
from .gp import TaskDataset
from .models import ALL_MODEL_NAMES
from .oracles import timing_sweep

TRACE_HEADER = "seed,model,task,iteration,x_json,y,best_so_far,simple_regret,adtm,train_ms,acq_ms"
VERIFY_SCOPES = ("lemma1", "props", "gradients", "equivalences", "blocked", "timing", "none", "all")
DEFAULT_VERIFY = ("lemma1", "props", "gradients", "equivalences", "blocked")


@dataclass(frozen=True)
class ExperimentConfig:
    """Configuration of one experiment grid (mirrors the TOML keys)."""

    benchmark: str
    n_sources: int = 1
    points_per_source: int = 20
    sigma_source: float = 0.1
    sigma_target: float = 0.1
    models: tuple = ("GPBO",)
    iterations: int = 10
    seeds: tuple = (0,)
    output_dir: str = "runs"
    master_seed: int = 0
    beta: float = 3.0
    n_restarts: int = 10
    downsample: int = None
    target_task_id: int = None
    verification: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if self.sigma_source < 0 or self.sigma_target < 0:
            raise InputError("noise levels must be >= 0")
        if len(set(self.seeds)) != len(self.seeds):
            raise InputError("seeds must be distinct")
        if self.n_sources < 1:
            raise InputError("n_sources must be >= 1")
        for m in self.models:
            if m not in ALL_MODEL_NAMES:
                raise InputError(f"unknown model kind: {m}")


def parse_config(path):
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    seeds = raw.get("seeds", 1)
    if isinstance(seeds, int):
        seeds = tuple(range(seeds))
    else:
        seeds = tuple(int(s) for s in seeds)
    known = {
        "benchmark", "n_sources", "points_per_source", "sigma_source",
        "sigma_target", "models", "iterations", "output_dir", "master_seed",
        "beta", "n_restarts", "downsample", "target_task_id", "verification",
    }
    unknown = set(raw) - known - {"seeds"}
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: raw[k] for k in known if k in raw}
    if "models" in kwargs:
        kwargs["models"] = tuple(str(m) for m in kwargs["models"])
    return ExperimentConfig(seeds=seeds, **kwargs)


def derive_run_seed(master_seed, model, task_index, seed_index):
    """Stable per-run seed; adding a model never shifts other runs."""
    text = f"{master_seed}|{model}|{task_index}|{seed_index}"
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2 ** 63)


def ingest_discrete_benchmark(path, target_task_id=None, downsample=None, seed=0):
    """Read a discrete-candidate benchmark CSV.

    Expected header: task_id, then the feature columns, then the objective
    column. Returns (domain, sources, target_pool): the domain holds the
    target task's deduplicated candidate rows; source tasks are optionally
    downsampled (uniform, without replacement, seeded); target rows never
    are, since they serve as the ground-truth pool.
    """
    rows_by_task = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) < 3 or header[0] != "task_id":
            raise InputError(
                "discrete benchmark needs a header: task_id, <features...>, <objective>"
            )
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise InputError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                task = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as err:
                raise InputError(f"{path}:{lineno}: {err}") from None
            rows_by_task.setdefault(task, []).append(values)
    if len(rows_by_task) < 2:
        raise InputError("discrete benchmark needs at least 2 tasks")
    task_ids = sorted(rows_by_task)
    target_id = task_ids[-1] if target_task_id is None else int(target_task_id)
    if target_id not in rows_by_task:
        raise InputError(f"target task id {target_id} not present in {path}")

    rng = np.random.default_rng(seed)
    sources = []
    for idx, task in enumerate(t for t in task_ids if t != target_id):
        data = np.asarray(rows_by_task[task])
        if downsample is not None and data.shape[0] > downsample:
            pick = np.sort(rng.choice(data.shape[0], size=downsample, replace=False))
            data = data[pick]
        sources.append(TaskDataset(data[:, :-1], data[:, -1], idx))

    target_rows = np.asarray(rows_by_task[target_id])
    seen = {}
    for row in target_rows:
        key = row[:-1].tobytes()
        if key not in seen:
            seen[key] = row
    dedup = np.asarray(list(seen.values()))
    domain = Domain.discrete(dedup[:, :-1])
    target_pool = TaskDataset(dedup[:, :-1], dedup[:, -1], len(sources))
    return domain, sources, target_pool


@dataclass(frozen=True)
class RunSpec:
    model: str
    task_index: int
    seed_index: int
    seed_value: int
    run_seed: int


def _family_run_setup(config, run_seed):
    """Per-run tasks, data and objective for a family benchmark."""
    family = Family(config.benchmark)
    ss = np.random.SeedSequence(run_seed)
    task_rng, data_rng, bo_seed_seq = ss.spawn(3)
    task_rng = np.random.default_rng(task_rng)
    data_rng = np.random.default_rng(data_rng)

    if family is Family.ALPINE and config.n_sources > 1:
        shifts = alpine_benchmark_shifts()
        if config.n_sources > len(shifts):
            raise InputError(f"alpine supports at most {len(shifts)} sources")
        src_tasks = [FamilyTask(family, [s]) for s in shifts[: config.n_sources]]
    else:
        src_tasks = [sample_task(family, task_rng) for _ in range(config.n_sources)]
    tgt_task = target_task(family, task_rng)

    sources = [
        generate_source_data(t, config.points_per_source, config.sigma_source, data_rng, task_id=i)
        for i, t in enumerate(src_tasks)
    ]
    x_min, f_min = true_minimum(tgt_task)
    objective = Objective(
        domain=Domain.continuous(tgt_task.bounds),
        evaluate_true=lambda x: evaluate(tgt_task, x),
        description=tgt_task.describe(),
        true_minimum=f_min,
        value_range=None,
    )
    return sources, objective, int(bo_seed_seq.generate_state(1)[0])


def _discrete_run_setup(config, run_seed):
    ss = np.random.SeedSequence(run_seed)
    sample_seed, bo_seed_seq = ss.spawn(2)
    domain, sources, pool = ingest_discrete_benchmark(
        config.benchmark,
        target_task_id=config.target_task_id,
        downsample=config.downsample,
        seed=np.random.default_rng(sample_seed),
    )
    values = {x.tobytes(): y for x, y in zip(pool.inputs, pool.observations)}
    y_min = float(np.min(pool.observations))
    y_max = float(np.max(pool.observations))
    objective = Objective(
        domain=domain,
        evaluate_true=lambda x: values[np.asarray(x, dtype=float).tobytes()],
        description=Path(config.benchmark).stem,
        true_minimum=y_min,
        value_range=(y_min, y_max),
    )
    return sources, objective, int(bo_seed_seq.generate_state(1)[0])


def _is_discrete(config):
    return config.benchmark not in [f.value for f in Family]


def _format_float(v):
    return "" if v is None else repr(float(v))


def execute_run(config, spec):
    """Run one (model, task, seed) cell and return its CSV rows."""
    if _is_discrete(config):
        sources, objective, bo_seed = _discrete_run_setup(config, spec.run_seed)
    else:
        sources, objective, bo_seed = _family_run_setup(config, spec.run_seed)
    trace = run_bo(
        BORunConfig(
            model_kind=spec.model,
            sources=tuple(sources),
            objective=objective,
            sigma_target=config.sigma_target,
            iterations=config.iterations,
            seed=bo_seed,
            beta=config.beta,
            n_restarts=config.n_restarts,
        )
    )
    regret, adtm = (None, None)
    if trace.records:
        y_range = objective.value_range or (None, None)
        regret, adtm = regret_metrics(trace, objective.true_minimum, *y_range)
    rows = []
    for i, rec in enumerate(trace.records):
        rows.append(
            [
                str(spec.seed_value),
                spec.model,
                objective.description,
                str(rec.iteration),
                json.dumps([float(v) for v in rec.x]),
                repr(rec.y_observed),
                repr(rec.best_so_far),
                _format_float(regret[i] if regret is not None else None),
                _format_float(adtm[i] if adtm is not None else None),
                repr(rec.train_ms),
                repr(rec.acq_ms),
            ]
        )
    return rows, trace


def _trace_path(out_dir, spec):
    return out_dir / "traces" / f"{spec.model}_task{spec.task_index}_seed{spec.seed_index}.csv"


def _marker_path(out_dir, spec):
    return out_dir / "markers" / f"{spec.model}_task{spec.task_index}_seed{spec.seed_index}.done"


def _run_one(args):
    config, spec, out_dir = args
    out_dir = Path(out_dir)
    trace_file = _trace_path(out_dir, spec)
    marker = _marker_path(out_dir, spec)
    if marker.exists() and trace_file.exists():
        return spec, "skipped", ""
    try:
        rows, trace = execute_run(config, spec)
    except Exception as err:  # noqa: BLE001 - per-run failures are recorded
        return spec, "failed", f"{type(err).__name__}: {err}"
    trace_file.parent.mkdir(parents=True, exist_ok=True)
    with open(trace_file, "w", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)
    marker.parent.mkdir(parents=True, exist_ok=True)
    marker.write_text("done\n")
    status = "ok"
    if trace.aborted:
        status = f"aborted ({trace.failure})"
    return spec, status, ""


def aggregate(out_dir, config):
    """Recompute the summary from the trace CSVs (pure aggregation)."""
    out_dir = Path(out_dir)
    per_model = {}
    for spec_model in config.models:
        series = {}
        adtm_series = {}
        for task_index in [0]:
            for seed_index in range(len(config.seeds)):
                path = out_dir / "traces" / f"{spec_model}_task{task_index}_seed{seed_index}.csv"
                if not path.exists():
                    continue
                with open(path, newline="") as fh:
                    reader = csv.DictReader(fh)
                    for row in reader:
                        it = int(row["iteration"])
                        if row["simple_regret"]:
                            series.setdefault(it, []).append(float(row["simple_regret"]))
                        if row["adtm"]:
                            adtm_series.setdefault(it, []).append(float(row["adtm"]))
        if not series:
            continue
        iters = sorted(series)
        mean = [float(np.mean(series[i])) for i in iters]
        sem = [
            float(np.std(series[i], ddof=1) / np.sqrt(len(series[i])))
            if len(series[i]) > 1
            else 0.0
            for i in iters
        ]
        entry = {"iterations": iters, "mean_regret": mean, "sem_regret": sem,
                 "n_runs": len(series[iters[-1]])}
        if adtm_series:
            entry["mean_adtm"] = [float(np.mean(adtm_series[i])) for i in iters]
        per_model[spec_model] = entry
    return {"benchmark": config.benchmark, "models": per_model}


def cmd_run(config, jobs):
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = [
        RunSpec(
            model=model,
            task_index=0,
            seed_index=i,
            seed_value=seed,
            run_seed=derive_run_seed(config.master_seed, model, 0, i),
        )
        for model in config.models
        for i, seed in enumerate(config.seeds)
    ]
    results = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, (config, s, str(out_dir))) for s in specs]
            for fut in concurrent.futures.as_completed(futures):
                results.append(fut.result())
    else:
        for s in specs:
            results.append(_run_one((config, s, str(out_dir))))
    n_failed = 0
    for spec, status, message in sorted(results, key=lambda r: (r[0].model, r[0].seed_index)):
        line = f"[{status}] {spec.model} seed={spec.seed_value}"
        if message:
            line += f": {message}"
        if status == "failed" or status.startswith("aborted"):
            n_failed += 1
        print(line)
    summary = aggregate(out_dir, config)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"summary written to {out_dir / 'summary.json'}")
    if n_failed * 2 > len(specs):
        return 1
    toggles = config.verification or {}
    if toggles.get("enabled"):
        scopes = tuple(toggles.get("scopes", DEFAULT_VERIFY))
        return cmd_verify(scopes, seed=config.master_seed)
    return 0


def cmd_verify(scopes, seed=0, out_path=None):
    from . import verify as verify_mod

    report = verify_mod.run_scopes(scopes, seed=seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
    for check in report["checks"]:
        print(f"[{'PASS' if check['passed'] else 'FAIL'}] {check['name']}: {check['detail']}")
    print(f"{report['n_passed']}/{report['n_total']} checks passed")
    return 0 if report["n_failed"] == 0 else 1


def cmd_timing(grid, nt, reps, kinds, out_path):
    if not kinds:
        raise InputError("kinds list must not be empty")
    records, slopes = timing_sweep(kinds, grid, nt, reps)
    lines = ["kind,stage,n_s,N_s,N_t,rep,ms"]
    for r in records:
        lines.append(f"{r.kind},{r.stage},{r.n_s},{r.N_s},{r.N_t},{r.rep},{r.ms!r}")
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
        print(f"timing records written to {out_path}")
    else:
        print(text, end="")
    print("slopes (log time vs log N_s):")
    for kind in kinds:
        print(f"  {kind}: {slopes[kind]:.3f}")
    return 0


def cmd_families_list():
    for family in Family:
        task = sample_task(family, 0)
        bounds = task.bounds
        box = " x ".join(f"[{lo:g}, {hi:g}]" for lo, hi in bounds)
        params = ", ".join(task.param_dict)
        print(f"{family.value:10s} dim={bounds.shape[0]} box={box} params=({params})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="transfer-bo",
        description="Transfer-learning Gaussian-process Bayesian optimization benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="TOML experiment configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override master_seed")
    p_run.add_argument("--out", default=None, help="override output_dir")
    p_run.add_argument("--jobs", type=int, default=None, help="parallel runs (env TRANSFER_BO_JOBS)")

    p_verify = sub.add_parser("verify", help="run verification oracle suites")
    p_verify.add_argument(
        "--scope",
        action="append",
        choices=VERIFY_SCOPES,
        default=None,
        help="suite(s) to run; default runs all except timing",
    )
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", default=None, help="write the JSON report here")

    p_timing = sub.add_parser("timing", help="training-step timing sweep")
    p_timing.add_argument("grid", help="comma-separated source sizes, e.g. 200,400,800,1600")
    p_timing.add_argument("--nt", type=int, default=100, help="target points")
    p_timing.add_argument("--reps", type=int, default=5)
    p_timing.add_argument(
        "--kinds", default="HGP,SHGP,BHGP,MHGP", help="comma-separated model kinds"
    )
    p_timing.add_argument("--out", default=None, help="write the CSV here")

    p_fam = sub.add_parser("families", help="synthetic function families")
    p_fam.add_argument("action", choices=["list"])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(args.config)
            if args.seed is not None:
                config = ExperimentConfig(
                    **{**config.__dict__, "master_seed": args.seed}
                )
            if args.out is not None:
                config = ExperimentConfig(**{**config.__dict__, "output_dir": args.out})
            jobs = args.jobs
            if jobs is None:
                jobs = int(os.environ.get("TRANSFER_BO_JOBS", "0")) or (os.cpu_count() or 1)
            return cmd_run(config, jobs)
        if args.command == "verify":
            scopes = tuple(args.scope) if args.scope else DEFAULT_VERIFY
            if "none" in scopes:
                scopes = ()
            elif "all" in scopes:
                scopes = DEFAULT_VERIFY + ("timing",)
            return cmd_verify(scopes, seed=args.seed, out_path=args.out)
        if args.command == "timing":
            grid = [int(v) for v in args.grid.split(",") if v]
            kinds = [k for k in args.kinds.split(",") if k]
            return cmd_timing(grid, args.nt, args.reps, kinds, args.out)
        if args.command == "families":
            return cmd_families_list()
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
