"""Command-line entry point: ``dflis <subcommand> ...``.

Failures print one JSON object {"error", "message", "exit_code"} on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .diagnostics import iact_components, kl_estimate
from .io import (
    ArtifactError,
    chain_to_csv,
    load_projector,
    read_chain,
    read_json,
    read_vector,
    save_projector,
    write_chain,
    write_csv,
    write_json,
    write_spectrum,
    write_vector,
)
from .linalg import FactorizationError, ValidationError
from .priors import UnsupportedFactorization
from .problems import make_truth_and_data
from .reduced import ReducedLikelihood
from .runner import build_subspace, default_mode, run_method
from .samplers import MapDivergenceError, spawn_rngs
from .subspace import kl_bound

log = logging.getLogger("dflis")


class HashMismatch(ValidationError):
    pass


class IncompatibleRuns(ValidationError):
    pass


EXIT_CODES = [
    (HashMismatch, 3),
    (IncompatibleRuns, 6),
    (ArtifactError, 4),
    (MapDivergenceError, 5),
    (cfgmod.ConfigError, 2),
    (UnsupportedFactorization, 2),
    (ValidationError, 2),
    (FactorizationError, 7),
]


def _out_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# simulate-data


def cmd_simulate_data(args):
    cfg = cfgmod.load_config(args.config)
    problem = cfgmod.build_problem(cfg)
    out = _out_dir(args.out)
    x_true, y, meta = make_truth_and_data(problem, np.random.default_rng(cfg["data"]["seed"]))
    write_vector(out / "data.csv", y, "y")
    np.save(out / "truth.npy", x_true)
    write_json(out / "data.json", {
        "data_hash": cfgmod.data_hash(cfg),
        "problem_hash": cfgmod.problem_hash(cfg),
        "seed": cfg["data"]["seed"],
        "meta": meta,
    })
    return {"data": str(out / "data.csv"), "m": int(y.size)}


def _load_data(path, cfg):
    y = read_vector(path)
    side = Path(path).with_name("data.json")
    if side.exists():
        meta = read_json(side)
        if meta.get("problem_hash") != cfgmod.problem_hash(cfg):
            raise HashMismatch(f"{path} was simulated for a different problem configuration")
    return y


# build-subspace


def cmd_build_subspace(args):
    cfg = cfgmod.load_config(args.config)
    if "reduction" not in cfg:
        raise cfgmod.ConfigError("config has no reduction section")
    red = cfg["reduction"]
    problem = cfgmod.build_problem(cfg)
    samples = y = None
    if red["kind"] == "data_dependent":
        if not args.chain or not args.data:
            raise ArtifactError("data_dependent reduction needs --chain and --data")
        rec, _ = read_chain(args.chain)
        if rec.space != "full" or rec.dim != problem.dim:
            raise ArtifactError("--chain must hold full-space states of this problem")
        samples = rec.states[args.burn_in :: max(1, args.thin)]
        y = _load_data(args.data, cfg)
    elif args.data or args.chain:
        raise cfgmod.ConfigError(f"{red['kind']} reduction does not read data or chains")
    proj, rep, extra = build_subspace(problem, red, samples, y)
    out = _out_dir(args.out)
    h = cfgmod.subspace_hash(cfg)
    save_projector(out / "projector", proj, config_hash=h)
    write_spectrum(out / "spectrum.csv", rep.eigenvalues)
    report = dict(rep.to_json(), config_hash=h, problem_hash=cfgmod.problem_hash(cfg))
    if "scores" in extra:
        write_csv(out / "scores.csv", ["index", "score"], [(i, float(s)) for i, s in enumerate(extra["scores"])])
        report["indices"] = list(proj.indices)
    write_json(out / "report.json", report)
    return {"rank": rep.rank, "bound_at_rank": rep.bound_at_rank, "projector": str(out / "projector.bin")}


# sample


def cmd_sample(args):
    cfg = cfgmod.load_config(args.config)
    if "sampler" not in cfg:
        raise cfgmod.ConfigError("config has no sampler section")
    scfg = cfg["sampler"]
    problem = cfgmod.working_problem(cfg)
    y = _load_data(args.data, cfg)
    proj = None
    if args.projector:
        proj, side = load_projector(args.projector)
        if side.get("config_hash") != cfgmod.subspace_hash(cfg):
            raise HashMismatch("projector was built from a different problem/reduction configuration")
        if proj.dim != problem.dim:
            raise HashMismatch("projector dimension does not match the problem")
    elif scfg["method"] not in ("PCN", "HMALA"):
        raise ArtifactError(f"method {scfg['method']} needs --projector")
    init = None
    if args.init_from_chain:
        rec0, _ = read_chain(args.init_from_chain)
        init = rec0.full_states()[-1] if rec0.space == "full" else None
        if init is None:
            raise ArtifactError("--init-from-chain needs a full-space chain")
    n_rep = int(scfg.get("replicates", 1))
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(scfg["seed"]).spawn(n_rep)]
    workers = int(args.workers or scfg.get("workers", 1))

    def one(i):
        return run_method(problem, proj, y, scfg, seeds[i], init=init)

    if workers > 1 and n_rep > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(n_rep)))
    else:
        results = [one(i) for i in range(n_rep)]
    out = _out_dir(args.out)
    write_json(out / "config.json", cfg)
    reps = []
    for i, (records, man) in enumerate(results):
        files = {}
        for name, rec in records.items():
            f = out / f"{name}_r{i}.bin"
            write_chain(f, rec, seed=seeds[i], extra={"problem_hash": cfgmod.problem_hash(cfg)})
            files[name] = f.name
            if args.csv:
                chain_to_csv(out / f"{name}_r{i}.csv", rec)
        reps.append(dict(man, files=files))
    manifest = {
        "method": scfg["method"],
        "problem_hash": cfgmod.problem_hash(cfg),
        "subspace_hash": cfgmod.subspace_hash(cfg) if proj is not None else None,
        "projector": str(Path(args.projector).resolve()) if args.projector else None,
        "data": str(Path(args.data).resolve()),
        "reduction_kind": cfg.get("reduction", {}).get("kind"),
        "replicates": reps,
    }
    write_json(out / "run.json", manifest)
    return {"run": str(out), "acceptance": [r["acceptance_rate"] for r in reps]}


# diagnose


def _frozen_reduced(cfg, problem, proj, rep):
    scfg = cfg["sampler"]
    mode = rep.get("mode") or default_mode(scfg["method"], problem.likelihood)
    r_frozen = spawn_rngs(rep["seed"], 4)[0]
    return ReducedLikelihood(proj, problem.likelihood, problem.prior, mode, int(scfg.get("N", 5)), rng=r_frozen)


def cmd_diagnose(args):
    run = Path(args.run)
    man = read_json(run / "run.json")
    cfg = cfgmod.load_config(read_json(run / "config.json"))
    c = float(args.c)
    run_proj = load_projector(man["projector"])[0] if man.get("projector") else None
    proj = load_projector(args.projector)[0] if args.projector else run_proj
    rows, reps = [], []
    for i, rep in enumerate(man["replicates"]):
        rec, hdr = read_chain(run / rep["files"]["chain"], projector=run_proj)
        xs = rec.states[args.burn_in :]
        if proj is not None and (rec.space == "full" or proj is not run_proj):
            xs = proj.coords(rec.full_states()[args.burn_in :])
        taus = iact_components(xs, c)
        rows.extend((i, j, float(t)) for j, t in enumerate(taus))
        reps.append({
            "replicate": i,
            "acceptance_rate": rec.acceptance_rate,
            "mean_iact": float(np.mean(taus)),
            "max_iact": float(np.max(taus)),
            "E_beta": rep.get("E_beta"),
            "sd_logL": rep.get("sd_logL"),
        })
    summary = {
        "method": man["method"],
        "problem_hash": man["problem_hash"],
        "reduction_kind": man.get("reduction_kind"),
        "rank": man["replicates"][0].get("rank"),
        "N": man["replicates"][0].get("N"),
        "iact_c": c,
        "iact_space": "projector coefficients" if proj is not None else "chain states",
        "replicates": reps,
    }
    if args.reference:
        if man["method"] not in ("OL", "OF") or proj is None:
            raise cfgmod.ConfigError("KL diagnosis needs an OL or OF run")
        problem = cfgmod.working_problem(cfg)
        y = _load_data(man["data"], cfg)
        ref, _ = read_chain(args.reference)
        if ref.space != "full" or ref.dim != problem.dim:
            raise ArtifactError("--reference must be a full-space chain of the same problem")
        xs = ref.states[args.burn_in :: max(1, args.thin)]
        red = _frozen_reduced(cfg, problem, proj, man["replicates"][0])
        full = problem.likelihood.log_likelihood_batch(y, xs)
        approx = red.log_likelihood_coeffs_batch(y, proj.coords(xs))
        est = kl_estimate(full, approx)
        bound = None if proj.eigenvalues is None else kl_bound(proj.eigenvalues, proj.rank, problem.prior.kappa)
        summary["kl"] = {"kl_estimate": est.value, "std_error": est.std_error, "n": est.n, "kl_bound": bound}
        write_csv(run / "kl.csv", ["kind", "rank", "N", "kl_estimate", "std_error", "kl_bound"],
                  [(man.get("reduction_kind"), proj.rank, summary["N"], est.value, est.std_error,
                    float("nan") if bound is None else bound)])
    write_csv(run / "iact.csv", ["replicate", "component", "tau"], rows)
    write_json(run / "summary.json", summary)
    return {"method": man["method"], "mean_iact": [r["mean_iact"] for r in reps], **({"kl": summary["kl"]} if "kl" in summary else {})}


# compare


def cmd_compare(args):
    sums = []
    for r in args.runs:
        p = Path(r) / "summary.json"
        if not p.exists():
            raise ArtifactError(f"{r}: run has not been diagnosed (no summary.json)")
        sums.append(read_json(p))
    if len({s["problem_hash"] for s in sums}) > 1:
        raise IncompatibleRuns("runs come from different problems")
    out = _out_dir(args.out)
    kl_rows = sorted(
        ((s["reduction_kind"], s["rank"], s["kl"]["kl_estimate"], s["kl"]["std_error"], s["kl"]["kl_bound"])
         for s in sums if "kl" in s),
        key=lambda t: (str(t[0]), t[1]),
    )
    write_csv(out / "kl_table.csv", ["kind", "rank", "kl_estimate", "std_error", "kl_bound"],
              [tuple(float("nan") if v is None else v for v in row) for row in kl_rows])
    groups = {}
    for s in sums:
        groups.setdefault((s["method"], s["rank"], s["N"]), []).append(s)
    rows = []
    for (method, r, n), ss in sorted(groups.items(), key=lambda kv: tuple(str(v) for v in kv[0])):
        reps = [rep for s in ss for rep in s["replicates"]]
        tau = np.array([rep["mean_iact"] for rep in reps])
        sd_l = [rep["sd_logL"] for rep in reps if rep.get("sd_logL") is not None]
        eb = [rep["E_beta"] for rep in reps if rep.get("E_beta") is not None]
        rows.append((
            method,
            "" if r is None else r,
            "" if n is None else n,
            float(tau.mean()),
            float(tau.std(ddof=1)) if tau.size > 1 else 0.0,
            float(np.mean(sd_l)) if sd_l else "",
            float(np.mean(eb)) if eb else "",
            len(reps),
        ))
    write_csv(out / "iact_table.csv", ["method", "r", "N", "tau_mean", "tau_sd", "sd_logL", "E_beta", "n_replicates"], rows)
    return {"kl_rows": len(kl_rows), "iact_rows": len(rows)}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    ap = _Parser(prog="dflis", description="Data-free likelihood-informed dimension reduction")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-data", help="draw a truth from the prior and simulate data")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("build-subspace", help="build the informed subspace (offline phase)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chain", help="posterior chain file (data_dependent kind only)")
    p.add_argument("--data", help="data CSV (data_dependent kind only)")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.set_defaults(func=cmd_build_subspace)

    p = sub.add_parser("sample", help="run the configured sampler (online phase)")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--projector")
    p.add_argument("--out", required=True)
    p.add_argument("--init-from-chain")
    p.add_argument("--workers", type=int)
    p.add_argument("--csv", action="store_true", help="also export chains as CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("diagnose", help="IACT summary and optional KL estimate for one run")
    p.add_argument("run")
    p.add_argument("--reference", help="full-space chain of the exact posterior")
    p.add_argument("--projector", help="project full-space chains on this basis for IACTs")
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--c", type=float, default=5.0, help="Sokal window constant")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="tabulate diagnosed runs")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return ap


def _fail(exc, code):
    msg = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(msg) + "\n")
    return code


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except Exception as exc:  # noqa: BLE001
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                return _fail(exc, code)
        if args.verbose:
            raise
        return _fail(exc, 1)
    sys.stdout.write(json.dumps(result, sort_keys=True, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
