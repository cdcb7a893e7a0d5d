"""Command-line front end and simulation-study driver.

Subcommands: ``simulate``, ``fit``, ``prior-sim``, ``reproduce-table`` and
``summarize``. Exit codes: 0 success, 1 usage error, 2 numerical failure,
3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import factor_model as fm
from . import mcmc
from . import postprocess as pp
from . import shrinkage_priors as sp
from .distributions import ParameterError, make_rng

log = logging.getLogger("cuspfactor")

PRIOR_A_THETA = {"F": 2.5, "L": 1.0, "H": 0.5}
DESK_SCENARIOS = ((20, 5), (50, 10))
FULL_SCENARIOS = DESK_SCENARIOS + ((100, 15),)
EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 1, 2, 3


def derive_stream(master_seed: int, *parts) -> int:
    """Stable 63-bit stream id from the master seed and a tuple of labels."""
    key = "|".join(str(p) for p in (master_seed,) + parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def sampler_config_for(prior="F", esp="1pb", algorithm="algo1", iters=10000, burnin=5000, overrides=None):
    """Sampler settings for a prior tag. ``iters`` counts kept draws after ``burnin``."""
    if prior not in PRIOR_A_THETA:
        raise ParameterError(f"unknown prior tag {prior!r}; use F, L or H")
    kw = dict(
        algorithm=algorithm,
        iterations=int(iters) + int(burnin),
        burn_in=int(burnin),
        a_theta=PRIOR_A_THETA[prior],
        esp=esp,
    )
    kw.update(overrides or {})
    return mcmc.SamplerConfig(**kw)


@dataclass
class StudyConfig:
    scenarios: list
    replicates: int = 5
    priors: tuple = ("F",)
    esp: str = "1pb"
    algorithm: str = "algo1"
    iters: int = 10000
    burnin: int = 5000
    seed: int = 0
    jobs: int = 1
    sampler: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicates < 1:
            raise ParameterError("replicates must be >= 1")
        self.scenarios = [s if isinstance(s, fm.ScenarioSpec) else fm.ScenarioSpec(**s) for s in self.scenarios]
        for p in self.priors:
            if p not in PRIOR_A_THETA:
                raise ParameterError(f"unknown prior tag {p!r}")

    @classmethod
    def desk(cls, full=False, **kw):
        dims = FULL_SCENARIOS if full else DESK_SCENARIOS
        scen = [fm.ScenarioSpec(m, h, density=d) for m, h in dims for d in ("dense", "sparse")]
        return cls(scenarios=scen, **kw)

    @classmethod
    def from_json(cls, path, **overrides):
        with Path(path).open() as fh:
            d = json.load(fh)
        d.update({k: v for k, v in overrides.items() if v is not None})
        if "priors" in d:
            d["priors"] = tuple(d["priors"])
        return cls(**d)


@dataclass(frozen=True)
class StudyUnit:
    scenario_index: int
    scenario: fm.ScenarioSpec
    prior: str
    replicate: int


def dataset_for(master_seed, scenario_index, scenario, replicate) -> fm.Dataset:
    """Replicate datasets depend only on the scenario and replicate, never on the prior."""
    rng = make_rng(master_seed, derive_stream(master_seed, "data", scenario_index, scenario.label, replicate))
    return fm.simulate_dataset(rng, scenario)


def run_unit(cfg: StudyConfig, unit: StudyUnit) -> dict:
    """Simulates one dataset, fits it and returns the per-replicate row."""
    row = {
        "scenario": unit.scenario.label,
        "prior": unit.prior,
        "replicate": unit.replicate,
    }
    data = dataset_for(cfg.seed, unit.scenario_index, unit.scenario, unit.replicate)
    scfg = sampler_config_for(unit.prior, cfg.esp, cfg.algorithm, cfg.iters, cfg.burnin, cfg.sampler)
    stream = derive_stream(cfg.seed, "chain", unit.scenario_index, unit.scenario.label, unit.prior, unit.replicate)
    t0 = time.perf_counter()
    try:
        out = mcmc.run_chain(make_rng(cfg.seed, stream), data, scfg)
    except mcmc.NumericalError as err:
        row.update(status="failed", error=str(err), runtime=time.perf_counter() - t0)
        return row
    s = pp.chain_summary(out, data.H0, data.Omega0)
    row.update(
        status="ok",
        mode=s["hstar_mode"],
        ordinate=s["ordinate"],
        mse=s["mse_omega"],
        ess_rate_logdet=s["ess_rate_logdet_omega"],
        ess_rate_frob=s["ess_rate_frob_inv_omega"],
        runtime=time.perf_counter() - t0,
    )
    return row


def _run_unit_star(args):
    return run_unit(*args)


def reproduce_table(cfg: StudyConfig) -> tuple[list, list]:
    """Runs every (scenario, prior, replicate) unit and aggregates by (scenario, prior).

    Returns ``(rows, table)``. Results do not depend on ``cfg.jobs``.
    """
    units = [
        StudyUnit(i, s, p, r)
        for i, s in enumerate(cfg.scenarios)
        for p in cfg.priors
        for r in range(cfg.replicates)
    ]
    if cfg.jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            rows = list(ex.map(_run_unit_star, [(cfg, u) for u in units]))
    else:
        rows = [run_unit(cfg, u) for u in units]
    return rows, aggregate(rows)


def aggregate(rows) -> list:
    """Median and 5%/95% quantiles of mode, ordinate and MSE over completed replicates."""
    table = []
    keys = list(dict.fromkeys((r["scenario"], r["prior"]) for r in rows))
    for scen, prior in keys:
        group = [r for r in rows if r["scenario"] == scen and r["prior"] == prior]
        ok = [r for r in group if r["status"] == "ok"]
        entry = {"scenario": scen, "prior": prior, "n_ok": len(ok), "n_failed": len(group) - len(ok)}
        if entry["n_failed"]:
            log.warning("%s/%s: %d replicate(s) failed", scen, prior, entry["n_failed"])
        for name in ("mode", "ordinate", "mse"):
            vals = np.array([r[name] for r in ok if r.get(name) is not None], dtype=float)
            if vals.size:
                q05, med, q95 = np.quantile(vals, [0.05, 0.5, 0.95])
            else:
                q05 = med = q95 = float("nan")
            entry[f"{name}_median"] = float(med)
            entry[f"{name}_q05"] = float(q05)
            entry[f"{name}_q95"] = float(q95)
        rt = [r["runtime"] for r in ok]
        entry["runtime_median"] = float(np.median(rt)) if rt else float("nan")
        table.append(entry)
    return table


def _write_rows(path, rows):
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# prior simulation
# ---------------------------------------------------------------------------


def _prior_spec(family, alpha, H, beta):
    if family in ("1pb", "2pb", "uniform"):
        return sp.EspSpec(family, H, beta=beta)
    if family == "legnaro":
        return sp.StickBreakingSpec.legnaro(alpha, H)
    if family == "two_param_ibp":
        return sp.StickBreakingSpec.two_param_ibp(alpha, beta, H)
    raise ParameterError(f"prior-sim does not support family {family!r}")


def prior_sim(rng, family, alpha, H, n_draws, eps, a_theta=2.5, c_theta=2.5, nu0=0.01, beta=1.0, equal=False):
    """Monte Carlo checks of a shrinkage prior.

    Returns a dict with the shrinkage report, H* moments and, for 1PB, the
    order-statistic stick moments against their closed forms.
    """
    spec = _prior_spec(family, alpha, H, beta)
    ss = sp.SpikeSlabSpec.triple_gamma(a_theta, c_theta, 1.0 if equal else nu0)
    report = sp.verify_increasing_shrinkage(rng, spec, ss, eps, n_draws, alpha)
    S = sp.sample_ordered_slab_indicators(rng, spec, n_draws, alpha)
    hs = S.sum(axis=1)
    mean, var = sp.hstar_prior_moments(spec, alpha if isinstance(spec, sp.EspSpec) else None)
    moments = [
        {"quantity": "mean", "closed_form": mean, "monte_carlo": float(hs.mean()),
         "std_error": float(hs.std(ddof=1) / np.sqrt(n_draws))},
        {"quantity": "variance", "closed_form": var, "monte_carlo": float(hs.var(ddof=1)),
         "std_error": float(np.std((hs - hs.mean()) ** 2, ddof=1) / np.sqrt(n_draws))},
    ]
    order_rows = []
    if family == "1pb":
        tau = sp.sample_esp(rng, spec, alpha, size=n_draws)
        ratios = sp.order_statistic_ratios(tau)
        _, b = sp.onepb_stick_law(alpha, H)
        for h in range(H):
            x = ratios[:, h]
            order_rows.append({
                "h": h + 1,
                "theory_mean": b[h] / (b[h] + 1.0),
                "mc_mean": float(x.mean()),
                "mc_std_error": float(x.std(ddof=1) / np.sqrt(n_draws)),
            })
    return {"report": report, "moments": moments, "order_stats": order_rows}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_sampler_flags(p):
    p.add_argument("--config", type=Path, help="JSON file of sampler or study settings")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algorithm", choices=mcmc.ALGORITHMS, default=None)
    p.add_argument("--prior", choices=sorted(PRIOR_A_THETA), default=None, help="F, L or H mixture")
    p.add_argument("--esp", choices=("1pb", "uniform", "2pb"), default=None)
    p.add_argument("--iters", type=int, default=None, help="kept draws after burn-in (default 10000)")
    p.add_argument("--burnin", type=int, default=None, help="burn-in cycles (default 5000)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cuspfactor", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write synthetic datasets")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int)
    p.add_argument("--H0", type=int)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--density", choices=("dense", "sparse"), default="dense")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--full", action="store_true", help="include the m=100 scenarios")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", help="run one chain on a dataset")
    p.add_argument("dataset", type=Path, help="dataset directory or CSV file")
    _add_sampler_flags(p)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("prior-sim", help="Monte Carlo checks of a shrinkage prior")
    p.add_argument("--family", default="1pb", choices=("1pb", "2pb", "uniform", "legnaro", "two_param_ibp"))
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--beta", type=float, default=1.0, help="second parameter of 2PB and IBP sticks")
    p.add_argument("--H", type=int, default=10)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--eps", default="0.05,0.1,0.5")
    p.add_argument("--prior", choices=sorted(PRIOR_A_THETA), default="F")
    p.add_argument("--nu0", type=float, default=0.01)
    p.add_argument("--equal", action="store_true", help="use the slab as spike (control run)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("reproduce-table", help="simulation study over scenarios and priors")
    _add_sampler_flags(p)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--priors", default=None, help="comma-separated prior tags, e.g. F,L,H")
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--full", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("summarize", help="summary JSON and figure data for a chain")
    p.add_argument("chain", type=Path)
    p.add_argument("--truth", type=Path, help="dataset directory holding truth.json")
    p.add_argument("--out", type=Path, help="defaults to the chain directory")
    return parser


def _read_json(path):
    with Path(path).open() as fh:
        return json.load(fh)


def cmd_simulate(args):
    if args.m is not None:
        if args.H0 is None:
            raise ParameterError("--m requires --H0")
        scen = [fm.ScenarioSpec(args.m, args.H0, n=args.n, density=args.density)]
        cfg = StudyConfig(scenarios=scen, replicates=args.replicates or 1, seed=args.seed)
    elif args.config:
        cfg = StudyConfig.from_json(args.config, seed=args.seed, replicates=args.replicates)
    else:
        cfg = StudyConfig.desk(full=args.full, seed=args.seed, replicates=args.replicates or 5)
    written = []
    for i, s in enumerate(cfg.scenarios):
        for r in range(cfg.replicates):
            d = dataset_for(cfg.seed, i, s, r)
            written.append(fm.save_dataset(d, args.out / s.label / f"rep{r:03d}"))
    print(f"wrote {len(written)} dataset(s) under {args.out}")


def _fit_config(args):
    base = _read_json(args.config) if args.config else {}
    prior = args.prior or base.pop("prior", "F")
    esp = args.esp or base.pop("esp", "1pb")
    algorithm = args.algorithm or base.pop("algorithm", "algo1")
    iters = args.iters if args.iters is not None else base.pop("iters", 10000)
    burnin = args.burnin if args.burnin is not None else base.pop("burnin", 5000)
    overrides = base.pop("sampler", {})
    if base:
        raise ParameterError(f"unknown fit settings: {sorted(base)}")
    return sampler_config_for(prior, esp, algorithm, iters, burnin, overrides), prior


def cmd_fit(args):
    data = fm.load_dataset(args.dataset)
    if args.standardize:
        data = data.standardized()
    cfg, prior = _fit_config(args)
    stream = derive_stream(args.seed, "fit")
    out = mcmc.run_chain(make_rng(args.seed, stream), data, cfg)
    extra = {
        "seed": args.seed,
        "stream": stream,
        "prior": prior,
        "dataset": str(Path(args.dataset).resolve()),
        "standardized": bool(args.standardize),
    }
    mcmc.save_chain(out, args.out, extra)
    print(f"chain written to {args.out} ({out.n_kept} draws, H={out.H})")


def cmd_prior_sim(args):
    eps = [float(e) for e in args.eps.split(",") if e]
    rng = make_rng(args.seed, derive_stream(args.seed, "prior-sim", args.family))
    res = prior_sim(
        rng, args.family, args.alpha, args.H, args.draws, eps,
        a_theta=PRIOR_A_THETA[args.prior], nu0=args.nu0, beta=args.beta, equal=args.equal,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    res["report"].to_csv(args.out / "shrinkage.csv")
    _write_rows(args.out / "hstar_moments.csv", res["moments"])
    if res["order_stats"]:
        _write_rows(args.out / "order_stats.csv", res["order_stats"])
    flag = "monotone" if res["report"].monotone else f"violations at {res['report'].violations}"
    print(f"shrinkage curve {flag}; E[H*] closed form {res['moments'][0]['closed_form']:.4f}, "
          f"Monte Carlo {res['moments'][0]['monte_carlo']:.4f}")


def cmd_reproduce_table(args):
    over = dict(seed=args.seed, replicates=args.replicates, jobs=args.jobs, esp=args.esp,
                algorithm=args.algorithm, iters=args.iters, burnin=args.burnin)
    if args.priors:
        over["priors"] = tuple(args.priors.split(","))
    elif args.prior:
        over["priors"] = (args.prior,)
    over = {k: v for k, v in over.items() if v is not None}
    if args.config:
        cfg = StudyConfig.from_json(args.config, **over)
    else:
        over.setdefault("priors", ("F", "L", "H"))
        cfg = StudyConfig.desk(full=args.full, **over)
    rows, table = reproduce_table(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    if rows:
        _write_rows(args.out / "replicates.csv", rows)
        _write_rows(args.out / "table.csv", table)
    with (args.out / "table.json").open("w") as fh:
        json.dump({"rows": rows, "table": table}, fh, indent=1, sort_keys=True)
    for t in table:
        print(f"{t['scenario']:>16} {t['prior']}  mode {t['mode_median']:.0f}  "
              f"ordinate {t['ordinate_median']:.2f}  MSE {t['mse_median']:.3f}")


def cmd_summarize(args):
    out = mcmc.load_chain(args.chain)
    truth_path = args.truth
    if truth_path is None and not out.meta.get("standardized") and out.meta.get("dataset"):
        cand = Path(out.meta["dataset"])
        cand = cand if cand.is_dir() else cand.parent
        truth_path = cand if (cand / "truth.json").exists() else None
    H0 = Omega0 = None
    if truth_path is not None:
        data = fm.load_dataset(truth_path)
        H0, Omega0 = data.H0, data.Omega0
    dest = args.out or args.chain
    pp.write_figure_data(out, dest)
    summary = pp.chain_summary(out, H0, Omega0)
    pp.write_summary(summary, Path(dest) / "summary.json")
    print(f"mode {summary['hstar_mode']}, ordinate {summary['ordinate']}, MSE {summary['mse_omega']}")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "prior-sim": cmd_prior_sim,
    "reproduce-table": cmd_reproduce_table,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except ParameterError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except mcmc.NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
