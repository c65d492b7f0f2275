"""Command-line interface.

Every command takes the same configuration surface: built-in defaults,
overridden by an optional key=value config file, overridden by explicit
flags. Unknown config keys are rejected. Machine-readable outputs are
CSV/JSON; the report path also renders PNG figures next to them unless
figures are disabled.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import plots
from .data import IngestError, load_csv, write_csv
from .diagnostics import ess, split_rhat, summarize
from .hmc import HmcConfig, SampleBatch, SamplingError, run_chains
from .inference import (augment_batch, coefficient_summary, record_medians,
                        yearly_aggregates, yearly_frame)
from .params import Pooling
from .predictive import (constant_z_predictive, heldout_log_likelihood, ppc_run,
                         split_heldout)
from .priors import SCENARIO_TARGETS, PriorSpec, ScenarioPreset, apply_scenario
from .synthetic import Exchangeable, Independent, Pairwise, SimSpec, simulate_full
from .util import jsonable


class ConfigError(ValueError):
    """Bad configuration: unknown key, unparseable value, or invalid setting."""


@dataclass
class RunConfig:
    data: str | None = None
    out: str = "out"
    seed: int = 0
    chains: int = 4
    iters: int = 1000
    warmup: int = 1000
    pooling: str = "partial"
    scenario: str = "a"
    heldout_frac: float = 0.2
    ppc_reps: int = 1000
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    save_draws: bool = False
    figures: bool = True
    school: str | None = None
    base_year: int | None = None
    n_schools: int = 50
    years: int = 6
    scheme: str = "independent"
    rho: float = 0.05
    draws: str | None = None

    def validate(self) -> None:
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")
        if self.warmup < 20:
            raise ConfigError("warmup must be >= 20")
        if not 0.0 < self.heldout_frac <= 0.5:
            raise ConfigError("heldout_frac must lie in (0, 0.5]")
        if self.ppc_reps < 2:
            raise ConfigError("ppc_reps must be >= 2")
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.scenario not in SCENARIO_TARGETS:
            raise ConfigError(f"scenario must be one of {', '.join(SCENARIO_TARGETS)}")
        if self.pooling not in ("partial", "complete", "none"):
            raise ConfigError("pooling must be partial, complete, or none")
        if self.scheme not in ("independent", "exchangeable", "pairwise"):
            raise ConfigError("scheme must be independent, exchangeable, or pairwise")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.n_schools < 1:
            raise ConfigError("n_schools must be >= 1")
        if self.years < 1:
            raise ConfigError("years must be >= 1")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL_KEYS = {"save_draws", "figures"}
_INT_KEYS = {"seed", "chains", "iters", "warmup", "ppc_reps", "leapfrog_steps",
             "base_year", "n_schools", "years"}
_FLOAT_KEYS = {"heldout_frac", "target_accept", "rho"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r} expects a number, got {raw!r}") from None
    return raw


def parse_config_file(path) -> dict:
    """Read key = value lines; '#' starts a comment; unknown keys are fatal."""
    out = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for key in _FIELD_TYPES:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _load_data(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("this command needs --data (or data = ... in the config file)")
    data, report = load_csv(cfg.data)
    print(f"ingested {cfg.data}")
    for line in report.lines():
        print("  " + line)
    return data


def _priors(cfg: RunConfig) -> PriorSpec:
    return apply_scenario(PriorSpec(), ScenarioPreset.from_id(cfg.scenario))


def _hmc_config(cfg: RunConfig) -> HmcConfig:
    return HmcConfig(
        chains=cfg.chains, warmup_iters=cfg.warmup, sampling_iters=cfg.iters,
        leapfrog_steps=cfg.leapfrog_steps, target_accept=cfg.target_accept,
        seed=cfg.seed,
    )


def _fit(cfg: RunConfig, data) -> SampleBatch:
    mode = Pooling.from_string(cfg.pooling)
    t0 = time.perf_counter()
    batch = run_chains(data, _priors(cfg), mode, _hmc_config(cfg))
    elapsed = time.perf_counter() - t0
    print(f"sampled {batch.n_draws} draws ({cfg.chains} chains x {cfg.iters}) "
          f"in {elapsed:.1f}s; divergences per chain: {batch.divergences.tolist()}")
    return batch


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    print(f"wrote {path}")


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")


def _write_draws(batch: SampleBatch, path: Path) -> None:
    chain = np.repeat(np.arange(batch.n_chains), batch.iters_per_chain)
    iters = np.tile(np.arange(batch.iters_per_chain), batch.n_chains)
    frame = pd.DataFrame(batch.draws, columns=batch.names)
    frame.insert(0, "iter", iters)
    frame.insert(0, "chain", chain)
    _write_frame(frame, path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    data = _load_data(cfg)
    batch = _fit(cfg, data)
    aug = augment_batch(batch, data)

    summary = coefficient_summary(batch)
    diag = summarize(batch)
    yearly = yearly_frame(yearly_aggregates(aug))
    medians = record_medians(aug)

    _write_frame(summary, out / "summary.csv")
    _write_frame(diag, out / "diagnostics.csv")
    _write_frame(yearly, out / "yearly.csv")
    _write_frame(medians, out / "plotdata" / "record_medians.csv")
    _write_frame(yearly, out / "plotdata" / "yearly.csv")
    if cfg.save_draws:
        _write_draws(batch, out / "draws.csv")
    _write_json({
        "seed": cfg.seed, "pooling": cfg.pooling, "scenario": cfg.scenario,
        "chains": cfg.chains, "iters": cfg.iters, "warmup": cfg.warmup,
        "accept_rate": batch.accept_rate, "divergences": batch.divergences,
        "step_sizes": batch.step_sizes, "max_rhat": float(diag["rhat"].max()),
        "min_ess": float(diag["ess"].min()),
    }, out / "fit.json")
    if cfg.figures:
        plots.yearly_bands(yearly, "incidence_per_1000", out / "figures" / "yearly_incidence.png")
        plots.yearly_bands(yearly, "reporting_rate", out / "figures" / "yearly_reporting.png")
        plots.record_median_panels(medians, out / "figures" / "record_medians.png")
        plots.rhat_panel(diag, out / "figures" / "rhat.png")
    print()
    print(summary.to_string(index=False, float_format=lambda v: f"{v:.3f}"))
    print(f"\nmax split R-hat = {diag['rhat'].max():.4f}, "
          f"min ESS = {diag['ess'].min():.0f}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if cfg.scheme == "independent":
        scheme = Independent()
    elif cfg.scheme == "exchangeable":
        scheme = Exchangeable(rho=cfg.rho)
    else:
        scheme = Pairwise()
    spec = SimSpec(
        n_schools=cfg.n_schools,
        years=tuple(range(2014, 2014 + cfg.years)),
        seed=cfg.seed,
        scheme=scheme,
    )
    sim = simulate_full(spec)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(sim.data, out / "data.csv")
    print(f"wrote {out / 'data.csv'}")
    _write_frame(sim.truth_frame(), out / "truth.csv")
    if cfg.figures:
        plots.reported_histogram(sim.data, out / "figures" / "reported_counts.png")
    total_z = int(sim.z.sum())
    total_x = int(sim.data.x.sum())
    print(f"simulated {sim.data.n_records} records across {sim.data.n_schools} schools "
          f"({cfg.scheme}); reported {total_x} of {total_z} latent events")
    return 0


def cmd_ppc(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    data = _load_data(cfg)
    split = split_heldout(data, cfg.heldout_frac, seed=cfg.seed)
    print(f"held out {split.heldout.n_records} of {data.n_records} records")
    batch = _fit(cfg, split.train)
    report = ppc_run(batch, split.heldout, _priors(cfg),
                     n_datasets=cfg.ppc_reps, seed=cfg.seed)
    _write_json(report.to_dict(), out / "ppc.json")
    for name, stat in report.stats.items():
        _write_frame(pd.DataFrame({name: stat.draws}), out / "plotdata" / f"ppc_{name}.csv")
    if cfg.figures:
        plots.ppc_panels(report, out / "figures" / "ppc.png")
    print()
    for name, stat in report.stats.items():
        flag = "inside" if stat.inside else "OUTSIDE"
        print(f"  {name:24s} observed {stat.observed:10.3f}  "
              f"95% [{stat.q025:.3f}, {stat.q975:.3f}]  "
              f"tail prob {stat.tail_prob:.3f}  ({flag})")
    return 0


def cmd_predict_constant_z(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if not cfg.school or cfg.base_year is None:
        raise ConfigError("predict-constant-z needs --school and --base-year")
    data = _load_data(cfg)
    batch = _fit(cfg, data)
    aug = augment_batch(batch, data)
    try:
        report = constant_z_predictive(cfg.school, cfg.base_year, aug, _priors(cfg),
                                       seed=cfg.seed)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    _write_json(report.to_dict(), out / "constant_z.json")
    _write_frame(pd.DataFrame({"count": report.support, "probability": report.pmf}),
                 out / "plotdata" / "constant_z_pmf.csv")
    if cfg.figures:
        plots.constant_z_bars(report, out / "figures" / "constant_z.png")
    print(f"\n{cfg.school} {cfg.base_year}: observed {report.observed}, "
          f"P(increase) = {report.prob_increase:.3f}, "
          f"P(at least double) = {report.prob_at_least_double:.3f}")
    return 0


def cmd_compare_pooling(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    data = _load_data(cfg)
    split = split_heldout(data, cfg.heldout_frac, seed=cfg.seed)
    print(f"held out {split.heldout.n_records} of {data.n_records} records")
    results = {}
    for pooling in ("partial", "complete", "none"):
        sub = RunConfig(**{**cfg.__dict__, "pooling": pooling})
        print(f"\n[{pooling}]")
        batch = _fit(sub, split.train)
        results[pooling] = heldout_log_likelihood(batch, split.heldout, _priors(cfg),
                                                  seed=cfg.seed)
    _write_json({name: {"log_likelihood": r.value, "mc_se": r.mc_se}
                 for name, r in results.items()}, out / "heldout_ll.json")
    _write_frame(pd.DataFrame([
        {"pooling": name, "log_likelihood": r.value, "mc_se": r.mc_se}
        for name, r in results.items()
    ]), out / "plotdata" / "pooling.csv")
    if cfg.figures:
        plots.pooling_comparison(results, out / "figures" / "pooling.png")
    print()
    ranked = sorted(results.items(), key=lambda kv: kv[1].value, reverse=True)
    for name, r in ranked:
        print(f"  {name:10s} held-out log likelihood {r.value:12.3f} (+/- {r.mc_se:.3f})")
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if not cfg.draws:
        raise ConfigError("diagnose needs --draws pointing at a draws.csv from fit")
    frame = pd.read_csv(cfg.draws)
    if "chain" not in frame.columns:
        raise ConfigError(f"{cfg.draws} has no 'chain' column")
    chains = sorted(frame["chain"].unique())
    params = [c for c in frame.columns if c not in ("chain", "iter")]
    per_chain = {c: frame[frame["chain"] == c] for c in chains}
    sizes = {len(g) for g in per_chain.values()}
    if len(sizes) != 1:
        raise ConfigError("chains have unequal lengths")
    rows = []
    for name in params:
        arr = np.stack([per_chain[c][name].to_numpy() for c in chains])
        flat = arr.reshape(-1)
        q25, q50, q75 = np.quantile(flat, [0.25, 0.5, 0.75])
        rows.append({
            "parameter": name, "mean": float(flat.mean()),
            "q25": float(q25), "median": float(q50), "q75": float(q75),
            "rhat": split_rhat(arr),
            "ess": float(sum(ess(row) for row in arr)),
        })
    diag = pd.DataFrame(rows)
    _write_frame(diag, out / "diagnostics.csv")
    if cfg.figures:
        plots.rhat_panel(diag, out / "figures" / "rhat.png")
    print(f"\n{len(params)} parameters over {len(chains)} chains: "
          f"max split R-hat = {diag['rhat'].max():.4f}, min ESS = {diag['ess'].min():.0f}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "ppc": cmd_ppc,
    "predict-constant-z": cmd_predict_constant_z,
    "compare-pooling": cmd_compare_pooling,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared options")
    g.add_argument("--config", help="key = value config file; flags override it")
    g.add_argument("--data", help="input record CSV")
    g.add_argument("--out", help="output directory (default: out)")
    g.add_argument("--seed", type=int, help="master seed; every stage derives from it")
    g.add_argument("--chains", type=int, help="number of HMC chains")
    g.add_argument("--iters", type=int, help="sampling iterations per chain")
    g.add_argument("--warmup", type=int, help="warmup iterations per chain")
    g.add_argument("--pooling", choices=["partial", "complete", "none"],
                   help="school-level pooling mode")
    g.add_argument("--scenario", choices=list(SCENARIO_TARGETS),
                   help="prior reporting-climate preset")
    g.add_argument("--heldout-frac", type=float, dest="heldout_frac",
                   help="fraction of records held out")
    g.add_argument("--ppc-reps", type=int, dest="ppc_reps",
                   help="predictive replicate datasets")
    g.add_argument("--leapfrog-steps", type=int, dest="leapfrog_steps",
                   help="leapfrog steps per HMC transition")
    g.add_argument("--target-accept", type=float, dest="target_accept",
                   help="dual-averaging acceptance target")
    g.add_argument("--save-draws", action="store_true", default=None, dest="save_draws",
                   help="also write draws.csv (one row per draw)")
    g.add_argument("--no-figures", action="store_const", const=False, default=None,
                   dest="figures", help="skip PNG rendering")

    parser = argparse.ArgumentParser(
        prog="undercount",
        description="Bayesian inference for underreported count data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common],
                   help="fit the model and summarize the posterior")
    sim = sub.add_parser("simulate", parents=[common],
                         help="generate a synthetic panel with known ground truth")
    sim.add_argument("--n-schools", type=int, dest="n_schools", help="schools to simulate")
    sim.add_argument("--years", type=int, help="number of years starting at 2014")
    sim.add_argument("--scheme", choices=["independent", "exchangeable", "pairwise"],
                     help="reporting mechanism")
    sim.add_argument("--rho", type=float, help="pairwise correlation for exchangeable")
    sub.add_parser("ppc", parents=[common],
                   help="posterior predictive checks on held-out records")
    pz = sub.add_parser("predict-constant-z", parents=[common],
                        help="next-cycle counts with latent totals held fixed")
    pz.add_argument("--school", help="school id")
    pz.add_argument("--base-year", type=int, dest="base_year", help="record year")
    sub.add_parser("compare-pooling", parents=[common],
                   help="held-out likelihood across pooling variants")
    dg = sub.add_parser("diagnose", parents=[common],
                        help="convergence diagnostics for a draws.csv")
    dg.add_argument("--draws", help="draws.csv produced by fit --save-draws")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IngestError, SamplingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
