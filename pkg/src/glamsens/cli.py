"""Command-line pipeline: simulate, fit, sens, study, reference.

Every command reads a config file (see :mod:`glamsens.config`), takes its
randomness from the master seed only, and writes its outputs atomically with
the config hash and seed embedded. Exit codes: 0 success, 1 internal error,
2 input error; failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, sensitivity as sens
from .config import MIN_REFERENCE, ConfigError, RunConfig, load_config
from .errors import DomainError, GlamError
from .glam import GlamModel, SampleSet, fit
from .io import (InputFileError, atomic_write, comment_lines, file_hash, long_csv, read_json,
                 read_samples_csv, samples_to_csv, write_json)
from .simulators import lhs, replicated_qoi

logger = logging.getLogger("glamsens")

# stream tags: each purpose draws from its own child of the master seed
DESIGN, SIMULATION, SENSITIVITY, ERRORS, REFERENCE = 1, 2, 3, 4, 5
STUDY_COLUMNS = ("N", "rep", "metric", "value")
SUMMARY_COLUMNS = ("N", "metric", "count", "median", "q1", "q3")


def stream(seed: int, *tags) -> np.random.Generator:
    """Generator for one purpose; independent of how many other streams exist."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, tags)]))


def slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")


# ---------------------------------------------------------------------------
# shared steps


def draw_samples(cfg: RunConfig, N: int, *tags):
    """Design of size N and one simulator run per point (``replications`` if > 1)."""
    sim = cfg.get_simulator()
    im = sim.input_model()
    rng = stream(cfg.seed, DESIGN, N, *tags)
    X = lhs(N, im, rng) if cfg.design.method == "lhs" else im.sample(rng, N)
    R = cfg.design.replications
    Xr = np.repeat(X, R, axis=0)
    y = np.asarray(sim.evaluate(Xr, stream(cfg.seed, SIMULATION, N, *tags)), dtype=float)
    rep = np.tile(np.arange(R), N) if R > 1 else None
    return Xr, y, rep, im


def single_N(cfg: RunConfig) -> int:
    if len(cfg.design.N) != 1:
        raise ConfigError("this command takes a single design.N", "design.N")
    return cfg.design.N[0]


def training_data(cfg: RunConfig):
    """(SampleSet, InputModel, extra provenance) from the data file or the simulator."""
    if cfg.data is not None:
        im = cfg.inputs
        X, y, _ = read_samples_csv(cfg.data, im.dim)
        try:
            im.check(X)
        except DomainError as exc:
            raise InputFileError(f"{cfg.data}: {exc}", cfg.data) from None
        return SampleSet(X, y), im, {"data_sha256": file_hash(cfg.data)}
    X, y, _, im = draw_samples(cfg, single_N(cfg))
    return SampleSet(X, y), im, {}


def compute_indices(g: GlamModel, cfg: RunConfig, seed_tags=()):
    """Index reports per target: [(label, SobolReport | None, error message | None)]."""
    sp = cfg.sensitivity
    settings = replace(sp.pce, max_order=sp.max_order)
    out = []
    targets = (["classical"] if sp.classical else []) + list(sp.qois)
    for k, target in enumerate(targets):
        rng = stream(cfg.seed, SENSITIVITY, *seed_tags, k)
        label = "classical" if target == "classical" else target.label
        try:
            if target == "classical":
                if sp.method == "pce":
                    report, _ = sens.classical_sobol_pce(g, rng, settings=settings)
                else:
                    report = sens.classical_sobol_pickfreeze(g, n_mc=sp.n_mc, rng=rng,
                                                             max_order=sp.max_order,
                                                             n_boot=sp.n_boot, level=sp.level)
            elif sp.method == "pce":
                report, _ = sens.qoi_sobol_pce(g, target, rng, settings=settings, seed=cfg.seed % 2**32)
            else:
                surface = sens.qoi_surface(g, target, cfg.seed % 2**32)
                report = sens.sobol_pickfreeze(surface, g.input_model, sp.n_mc, rng,
                                               max_order=sp.max_order, qoi=label,
                                               n_boot=sp.n_boot, level=sp.level)
            out.append((label, report, None))
        except GlamError as exc:
            logger.warning("indices of %s failed: %s", label, exc)
            out.append((label, None, f"{type(exc).__name__}: {exc}"))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path, args):
    N = single_N(cfg)
    X, y, rep, im = draw_samples(cfg, N)
    prov = cfg.provenance()
    atomic_write(out / "samples.csv", samples_to_csv(X, y, im.names, rep, prov))
    return {"samples": str(out / "samples.csv"), "n": int(y.size)}


def cmd_fit(cfg: RunConfig, out: Path, args):
    s, im, extra = training_data(cfg)
    prov = cfg.provenance(**extra)
    if cfg.data is None:
        atomic_write(out / "samples.csv", samples_to_csv(s.X, s.y, im.names, None, prov))
    model, report = fit(s, im, cfg.fit)
    write_json(out / "model.json", model.to_dict(), prov)
    write_json(out / "fit_report.json", dict(report.to_dict(), fit_config=cfg.fit.to_dict()), prov)
    return {"model": str(out / "model.json"), "nll": report.nll}


def cmd_sens(cfg: RunConfig, out: Path, args):
    model_path = Path(args.model) if args.model else out / "model.json"
    d = read_json(model_path)
    try:
        g = GlamModel.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise InputFileError(f"not a GLaM model file: missing {exc}", model_path) from None
    prov = cfg.provenance(model_sha256=file_hash(model_path))
    summary = {"reports": {}, "errors": {}}
    for label, report, err in compute_indices(g, cfg):
        if report is None:
            summary["errors"][label] = err
            continue
        name = f"sobol_{slug(label)}"
        write_json(out / f"{name}.json", report.to_dict(), prov)
        atomic_write(out / f"{name}.csv", comment_lines(prov) + report.to_csv())
        summary["reports"][label] = name
    write_json(out / "sens_summary.json", summary, prov)
    return summary


# -- study


def study_references(cfg: RunConfig):
    """Reference QoI values on a fixed test set, shared by all repetitions.

    Analytic where the simulator has a closed form, otherwise empirical from
    ``errors.qoi_reps`` runs per point.
    """
    sim = cfg.get_simulator()
    im = sim.input_model()
    X = im.sample(stream(cfg.seed, ERRORS, 0), cfg.errors.qoi_points)
    refs = {}
    for k, q in enumerate(cfg.sensitivity.qois):
        exact = sim.analytic_qoi(q.kind, q.param)
        if exact is not None:
            refs[q.label] = exact(X)
        else:
            rng = stream(cfg.seed, ERRORS, 1, k)
            refs[q.label] = replicated_qoi(sim.evaluate, q.kind, q.param, cfg.errors.qoi_reps, rng)(X)
    return X, refs


def study_task(cfg: RunConfig, N: int, rep: int, refs) -> dict:
    """Metrics of one (N, repetition) pair."""
    sim = cfg.get_simulator()
    X, y, _, im = draw_samples(cfg, N, rep)
    s = SampleSet(X, y)
    g, report = fit(s, im, replace(cfg.fit, seed=(cfg.fit.seed + 7919 * rep + N) % 2**32))
    m = {"nll": report.nll / len(s)}
    rng = stream(cfg.seed, ERRORS, 2, N, rep)
    if sim.quantile is not None:
        m["eps_Q"] = sens.error_q_metric(g, sim.quantile, rng, im, cfg.errors.n_test)
    X_ref, ref_values = refs
    for q in cfg.sensitivity.qois:
        ref = ref_values[q.label]
        var = float(np.var(ref))
        try:
            if var > 0:
                est = sens.qoi_surface(g, q, cfg.seed % 2**32)(X_ref)
                m[f"eps_q.{q.label}"] = float(np.mean((ref - est) ** 2) / var)
        except GlamError as exc:
            logger.warning("eps_q of %s undefined: %s", q.label, exc)
    if cfg.errors.snr:
        try:
            m["snr"] = sens.snr_glam(g, rng, im, n_mc=max(10**3, min(cfg.errors.n_test, 10**5)))
        except GlamError as exc:
            logger.warning("SNR undefined: %s", exc)
    for label, r, _ in compute_indices(g, cfg, (N, rep)):
        if r is None:
            continue
        for e in r.entries:
            if e.kind in ("first", "total", "closed"):
                var = "+".join(r.variables[i] for i in e.subset)
                m[f"{label}.{e.kind}.{var}"] = e.value
    return m


def _run_study_task(payload):
    cfg, N, rep, refs = payload
    try:
        return {"N": N, "rep": rep, "status": "ok", "metrics": study_task(cfg, N, rep, refs)}
    except (GlamError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return {"N": N, "rep": rep, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _read_manifest(path: Path, chash: str):
    done = {}
    if not path.exists():
        return done
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            # a torn last line from an interrupted write: ignore it
            logger.warning("ignoring unreadable manifest line %d", lineno)
            continue
        if rec.get("config_hash") != chash:
            raise InputFileError("manifest belongs to a different config; use a fresh --out",
                                 path, lineno)
        done[(rec["N"], rec["rep"])] = rec
    return done


def _append_manifest(path: Path, rec: dict):
    with open(path, "a") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()


def cmd_study(cfg: RunConfig, out: Path, args):
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    done = _read_manifest(manifest, cfg.hash)
    # rewrite the manifest without torn lines before appending to it
    atomic_write(manifest, "".join(json.dumps(r, sort_keys=True) + "\n" for r in done.values()))
    pairs = [(N, rep) for N in cfg.design.N for rep in range(cfg.repetitions)]
    todo = [p for p in pairs if p not in done]
    refs = study_references(cfg) if todo else None
    payloads = [(cfg, N, rep, refs) for N, rep in todo]
    threads = max(1, int(args.threads or 1))
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(threads) as pool:
            results = pool.map(_run_study_task, payloads)
            for rec in results:
                rec.update(config_hash=cfg.hash, seed=cfg.seed)
                _append_manifest(manifest, rec)
                done[(rec["N"], rec["rep"])] = rec
    else:
        for payload in payloads:
            rec = _run_study_task(payload)
            rec.update(config_hash=cfg.hash, seed=cfg.seed)
            _append_manifest(manifest, rec)
            done[(rec["N"], rec["rep"])] = rec

    rows, failures, by_metric = [], [], {}
    for N, rep in pairs:
        rec = done[(N, rep)]
        if rec["status"] != "ok":
            failures.append({"N": N, "rep": rep, "error": rec["error"]})
            continue
        for metric in sorted(rec["metrics"]):
            v = float(rec["metrics"][metric])
            rows.append({"N": N, "rep": rep, "metric": metric, "value": v})
            by_metric.setdefault((N, metric), []).append(v)
    summary = []
    for (N, metric), vals in sorted(by_metric.items()):
        q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
        summary.append({"N": N, "metric": metric, "count": len(vals), "median": float(med),
                        "q1": float(q1), "q3": float(q3)})
    prov = cfg.provenance()
    atomic_write(out / "study.csv", long_csv(rows, STUDY_COLUMNS, prov))
    atomic_write(out / "study_summary.csv", long_csv(summary, SUMMARY_COLUMNS, prov))
    write_json(out / "study_failures.json", {"failures": failures}, prov)
    return {"rows": len(rows), "failures": len(failures), "repetitions": len(pairs)}


# -- reference


def cmd_reference(cfg: RunConfig, out: Path, args):
    sim = cfg.get_simulator()
    rs = cfg.reference
    for key, minimum in MIN_REFERENCE.items():
        if getattr(rs, key) < minimum:
            raise ConfigError(f"reference.{key} = {getattr(rs, key)} is below the minimum {minimum}",
                              f"reference.{key}")
    im = sim.input_model()
    prov = cfg.provenance()
    written = []

    def emit(name, report):
        write_json(out / f"{name}.json", report.to_dict(), prov)
        atomic_write(out / f"{name}.csv", comment_lines(prov) + report.to_csv())
        written.append(name)

    if rs.classical:
        rep = sens.classical_sobol_simulator(sim.evaluate, im, rs.n_mc, stream(cfg.seed, REFERENCE, 0))
        rep.metadata["note"] = "first-order and closed indices only (latent noise cannot be frozen)"
        emit("reference_classical", rep)
    for k, q in enumerate(rs.qois):
        rng = stream(cfg.seed, REFERENCE, 1, k)
        surface = replicated_qoi(sim.evaluate, q.kind, q.param, rs.n_reps, rng)
        rep = sens.sobol_pickfreeze(surface, im, rs.n_points, rng, qoi=q.label,
                                    estimator="pick-freeze (replicated)", kinds=rs.kinds)
        rep.sample_sizes["n_reps"] = rs.n_reps
        emit(f"reference_{slug(q.label)}", rep)
    write_json(out / "reference_summary.json", {"reports": written,
                                                "budget": {"n_points": rs.n_points,
                                                           "n_reps": rs.n_reps, "n_mc": rs.n_mc}}, prov)
    return {"reports": written}


COMMANDS = {
    "simulate": (cmd_simulate, "run the simulator on a design and write samples.csv"),
    "fit": (cmd_fit, "fit a GLaM and write model.json and fit_report.json"),
    "sens": (cmd_sens, "classical and QoI-based Sobol' indices of a fitted model"),
    "study": (cmd_study, "convergence study over design sizes and repetitions"),
    "reference": (cmd_reference, "brute-force reference indices from the simulator"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glamsens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"glamsens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--threads", type=int, default=1, help="worker processes for study")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "sens":
            p.add_argument("--model", default=None, help="model JSON (default: OUT/model.json)")
    return parser


def _error_json(exc, code):
    d = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("path", "row", "key"):
        if getattr(exc, attr, None) is not None:
            d[attr] = getattr(exc, attr)
    return json.dumps(d, sort_keys=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1", "threads")
        cfg = load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command][0](cfg, out, args)
    except DomainError as exc:
        print(_error_json(exc, 2), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as an internal error
        logger.debug("internal error", exc_info=True)
        print(_error_json(exc, 1), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
