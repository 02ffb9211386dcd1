"""File-based experiment pipeline and the ``chaosflow`` command.

Stages and the files they write into ``--out``::

    simulate      train_full.cftj, test_full.cftj
    make-dataset  dataset.cfds (+ dataset.json sidecar)
    train         model.cfnn, loss_history.csv
    predict       prediction.cftj, reference.cftj
    evaluate      report_reference.json, report_prediction.json, comparison.json,
                  pointwise_log_error.csv, phase_*.csv, diag_*.csv
    compare       comparison.json

Each stage also writes ``manifest_<stage>.json`` with the hash of the config
sections it depends on, the SHA-256 of every input and output file, and the
wall time. A stage reads its inputs from ``--stage-in`` (default ``--out``)
and refuses to run if an upstream file is missing, differs from the hash in
its upstream manifest, or was produced under a different config.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import chaostats as cs
from .config import ConfigError, ExperimentConfig, config_hash, load_config, validate_config
from .dataset import load_dataset, project_observed, sample_sequences, save_dataset
from .dynamics import IntegrationDivergedError, integrate
from .flownet import TrainingDivergedError, init_model, load_checkpoint, save_checkpoint, train
from .rollout import passes_stability, pointwise_log_abs_error, predict, stability_envelope
from .trajectory import atomic_write_bytes, load_trajectory, save_trajectory

__all__ = ["STAGES", "UpstreamError", "run_stage", "run_all", "main"]

log = logging.getLogger("chaosflow")

STAGES = ("simulate", "make-dataset", "train", "predict", "evaluate", "compare")

# config sections each stage depends on, cumulative along the pipeline
_SECTIONS = {
    "simulate": ("system", "simulate", "test"),
    "make-dataset": ("system", "simulate", "test", "observation", "dataset"),
    "train": ("system", "simulate", "test", "observation", "dataset", "model", "train"),
    "predict": ("system", "simulate", "test", "observation", "dataset", "model", "train"),
    "evaluate": ("system", "simulate", "test", "observation", "dataset", "model", "train", "metrics"),
    "compare": ("system", "simulate", "test", "observation", "dataset", "model", "train", "metrics"),
}

# stage -> (upstream stage, file) pairs it consumes
_INPUTS = {
    "simulate": [],
    "make-dataset": [("simulate", "train_full.cftj")],
    "train": [("make-dataset", "dataset.cfds")],
    "predict": [("train", "model.cfnn"), ("simulate", "test_full.cftj")],
    "evaluate": [("predict", "prediction.cftj"), ("predict", "reference.cftj")],
    "compare": [("evaluate", "report_reference.json"), ("evaluate", "report_prediction.json")],
}

EXIT_OK, EXIT_CONFIG, EXIT_UPSTREAM, EXIT_DIVERGED = 0, 2, 3, 4


class UpstreamError(RuntimeError):
    pass


def _sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _write_csv(path: Path, header: list[str], columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=np.float64) for c in columns])
    buf = io.StringIO()
    np.savetxt(buf, data, fmt="%.17g", delimiter=",", header=",".join(header), comments="")
    atomic_write_bytes(path, buf.getvalue().encode())


def _check_inputs(stage: str, cfg: dict, stage_in: Path) -> dict:
    fps = {}
    for up, name in _INPUTS[stage]:
        path = stage_in / name
        man_path = stage_in / f"manifest_{up}.json"
        if not path.exists():
            raise UpstreamError(f"{stage}: missing upstream file {path} (run '{up}' first)")
        if not man_path.exists():
            raise UpstreamError(f"{stage}: missing upstream manifest {man_path}")
        try:
            man = json.loads(man_path.read_text())
        except json.JSONDecodeError as exc:
            raise UpstreamError(f"{stage}: corrupt manifest {man_path}: {exc}") from None
        want = config_hash(cfg, _SECTIONS[up])
        if man.get("config_hash") != want:
            raise UpstreamError(f"{stage}: '{up}' outputs were produced under a different config")
        digest = _sha(path)
        if man.get("outputs", {}).get(name) != digest:
            raise UpstreamError(f"{stage}: {name} does not match the hash in {man_path.name}")
        fps[name] = digest
    return fps


def _simulate(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    train_traj = integrate(ec.system, ec.sim_x0, ec.dt, ec.sim_steps, ec.substeps)
    test_traj = integrate(ec.system, ec.test_x0, ec.dt, ec.test_steps, ec.substeps)
    save_trajectory(train_traj, out / "train_full.cftj")
    save_trajectory(test_traj, out / "test_full.cftj")
    return {}


def _make_dataset(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    full = load_trajectory(src / "train_full.cftj")
    observed = project_observed(full, ec.observation)
    save_dataset(sample_sequences(observed, ec.dataset), out / "dataset.cfds")
    return {}


def _train(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    ds = load_dataset(src / "dataset.cfds")
    model = init_model(ds.obs_dim, ec.memory_len, ec.hidden_layers, ec.init_seed)

    def progress(epoch, loss):
        if epoch % 100 == 0 or epoch == ec.train.epochs - 1:
            log.info("epoch %d loss %.6g", epoch, loss)

    model, history = train(model, ds, ec.train, progress)
    save_checkpoint(model, out / "model.cfnn")
    _write_csv(out / "loss_history.csv", ["epoch", "loss"], [np.arange(history.size), history])
    return {"final_loss": float(history[-1])}


def _predict(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    model = load_checkpoint(src / "model.cfnn")
    ref = project_observed(load_trajectory(src / "test_full.cftj"), ec.observation)
    L = model.window_len
    run = predict(model, ref.states[:L], ref.n_rows - L, dt=ref.dt, t0=ref.t0, labels=ref.labels)
    save_trajectory(run.predicted, out / "prediction.cftj")
    save_trajectory(ref, out / "reference.cftj")
    envelope = stability_envelope(ref, ec.stability_factor)
    return {
        "rollout": run.manifest(),
        "stable": (not run.diverged) and passes_stability(run.predicted, envelope),
    }


def _evaluate(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    pred = load_trajectory(src / "prediction.cftj")
    ref = load_trajectory(src / "reference.cftj")
    # binary trajectories carry no labels
    labels = [ec.system.labels[i] for i in ec.observation.indices]
    if ref.dim == len(labels):
        ref.labels = labels
        pred.labels = labels
    rep_ref, rep_pred = cs.report_pair(ref, pred, ec.metrics)
    cs.save_report(rep_ref, out / "report_reference.json")
    cs.save_report(rep_pred, out / "report_prediction.json")
    table = cs.compare_reports(rep_ref, rep_pred)
    _write_json(out / "comparison.json", table)

    err = pointwise_log_abs_error(pred, ref)
    t = ref.times[: err.shape[0]]
    _write_csv(out / "pointwise_log_error.csv", ["t", *labels], [t, *err.T])
    _write_csv(out / "phase_reference.csv", ["t", *labels], [ref.times, *ref.states.T])
    _write_csv(out / "phase_prediction.csv", ["t", *labels], [pred.times, *pred.states.T])
    for tag, rep in (("reference", rep_ref), ("prediction", rep_pred)):
        lags = max(a.size for a in rep.acf)
        acf_cols = [np.pad(a, (0, lags - a.size), constant_values=np.nan) for a in rep.acf]
        _write_csv(out / f"diag_acf_{tag}.csv", ["lag", *labels], [np.arange(lags), *acf_cols])
        for ch, (edges, dens) in enumerate(rep.histogram):
            _write_csv(
                out / f"diag_hist_{tag}_{labels[ch]}.csv", ["left", "right", "density"],
                [edges[:-1], edges[1:], dens],
            )
        if "corr_dim" in rep.diagnostics:
            lr, lc = rep.diagnostics["corr_dim"]
            _write_csv(out / f"diag_corrdim_{tag}.csv", ["log_R", "log_C"], [lr, lc])
        if "lyapunov" in rep.diagnostics:
            k, curve = rep.diagnostics["lyapunov"]
            _write_csv(out / f"diag_lyapunov_{tag}.csv", ["k", "t", "mean_log_divergence"], [k, k * ref.dt, curve])
    return {"metrics": table["metrics"]}


def _compare(ec: ExperimentConfig, src: Path, out: Path) -> dict:
    rep_ref = cs.load_report(src / "report_reference.json")
    rep_pred = cs.load_report(src / "report_prediction.json")
    table = cs.compare_reports(rep_ref, rep_pred)
    _write_json(out / "comparison.json", table)
    return {"metrics": table["metrics"]}


_RUNNERS = {
    "simulate": _simulate,
    "make-dataset": _make_dataset,
    "train": _train,
    "predict": _predict,
    "evaluate": _evaluate,
    "compare": _compare,
}


def run_stage(cfg: dict, stage: str, out: str | os.PathLike, stage_in: Optional[str | os.PathLike] = None) -> dict:
    """Run one stage and return its manifest (also written to ``manifest_<stage>.json``)."""
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}")
    ec = ExperimentConfig.from_dict(cfg)
    out = Path(out)
    src = Path(stage_in) if stage_in is not None else out
    out.mkdir(parents=True, exist_ok=True)
    inputs = _check_inputs(stage, cfg, src)
    start = time.perf_counter()
    flags = _RUNNERS[stage](ec, src, out)
    wall = time.perf_counter() - start
    produced = sorted(n for n in _expected_outputs(stage, out) if (out / n).exists())
    manifest = {
        "stage": stage,
        "config_name": ec.name,
        "config_hash": config_hash(cfg, _SECTIONS[stage]),
        "inputs": inputs,
        "outputs": {name: _sha(out / name) for name in produced},
        "flags": flags,
        "wall_time_s": wall,
    }
    _write_json(out / f"manifest_{stage}.json", manifest)
    return manifest


def _expected_outputs(stage: str, out: Path) -> set[str]:
    fixed = {
        "simulate": {"train_full.cftj", "test_full.cftj"},
        "make-dataset": {"dataset.cfds", "dataset.json"},
        "train": {"model.cfnn", "loss_history.csv"},
        "predict": {"prediction.cftj", "reference.cftj"},
        "evaluate": {"report_reference.json", "report_prediction.json", "comparison.json",
                     "pointwise_log_error.csv", "phase_reference.csv", "phase_prediction.csv"},
        "compare": {"comparison.json"},
    }[stage]
    if stage == "evaluate":
        fixed |= {p.name for p in out.glob("diag_*.csv")}
    return fixed


def run_all(cfg: dict, out: str | os.PathLike) -> dict:
    return {stage: run_stage(cfg, stage, out) for stage in STAGES}


def _apply_seed(cfg: dict, seed: int) -> dict:
    cfg = json.loads(json.dumps(cfg))
    cfg["dataset"]["seed"] = seed
    cfg["train"]["seed"] = seed
    cfg["model"]["init_seed"] = seed
    return cfg


def _limit_threads(n: Optional[int]):
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaosflow", description="Learn and validate flow maps of chaotic systems.")
    p.add_argument("stage", choices=[*STAGES, "run-all"])
    p.add_argument("--config", required=True, help="JSON config file or preset name (ex1..ex4, ex1-desk..ex4-desk)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stage-in", default=None, help="directory holding upstream artifacts (default: --out)")
    p.add_argument("--seed", type=int, default=None, help="override dataset, init and training seeds")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap (env CHAOSFLOW_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = args.threads or (int(os.environ["CHAOSFLOW_THREADS"]) if os.environ.get("CHAOSFLOW_THREADS") else None)

    try:
        cfg = load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"chaosflow: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and isinstance(cfg, dict) and all(k in cfg for k in ("dataset", "train", "model")):
        cfg = _apply_seed(cfg, args.seed)
    problems = validate_config(cfg)
    if problems:
        print("chaosflow: invalid config", file=sys.stderr)
        for msg in problems:
            print(f"  {msg}", file=sys.stderr)
        return EXIT_CONFIG

    limiter = _limit_threads(threads)
    try:
        stages = STAGES if args.stage == "run-all" else (args.stage,)
        for stage in stages:
            man = run_stage(cfg, stage, args.out, args.stage_in if stage == stages[0] else None)
            flags = man["flags"]
            if stage == "predict" and flags["rollout"]["diverged"]:
                print(f"chaosflow: rollout diverged at step {flags['rollout']['diverged_at']}", file=sys.stderr)
            log.info("%s done in %.1fs", stage, man["wall_time_s"])
    except ConfigError as exc:
        print(f"chaosflow: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UpstreamError as exc:
        print(f"chaosflow: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (TrainingDivergedError, IntegrationDivergedError) as exc:
        print(f"chaosflow: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
