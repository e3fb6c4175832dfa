"""Command-line front end.

Subcommands run the canned attack studies (CSV tables + rendered figures),
one-shot consensus/election/valuation demos, a scripted market walkthrough,
and ledger verification. Exit codes: 0 success, 1 configuration error,
2 runtime error, 3 threshold check failed (for CI gating with --check).
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from pathlib import Path

from . import config as config_mod
from .config import AppConfig
from .consensus import ConsensusRow, PrivacyLedger, run_consensus, write_consensus_csv
from .core import SeededRng, SpatialCoalition, derive_trial_rng
from .errors import ConfigError, CrowdMarketError
from .experiments import (
    AttackModel,
    ExperimentSpec,
    Pipeline,
    build_reputation_population,
    run_fig4,
    run_fig5,
    run_fig6,
    write_summary_csv,
    write_trials_csv,
)
from .market import (
    Bid,
    Ledger,
    Listing,
    Market,
    ProvenanceRef,
    Right,
    distribute_reward,
    verify_chain_file,
    write_rewards_csv,
)
from .valuation import (
    DataPointRef,
    assign_work,
    load_datapoints_csv,
    regression_objective,
    run_work_chain,
    shapley_exact,
    shapley_sampled,
    sum_labels_objective,
    verify_work_chain,
    write_shapley_csv,
)
from .verification import AuditLog, commit, make_honest_oracle, verify_agent
from .voting import elect_committee, write_transcript_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_THRESHOLD = 3

_PRESETS = {
    "simulate-fig4": "fig4",
    "simulate-fig5": "fig5",
    "simulate-fig6": "fig6",
    "consensus": "demo",
    "elect": "demo",
    "shapley": "demo",
    "market-demo": "demo",
    "verify-ledger": "demo",
}


class ThresholdFailure(CrowdMarketError):
    pass


def preset_path(name: str) -> Path:
    return Path(str(resources.files("crowdmarket") / "presets" / f"{name}.toml"))


def _load(args: argparse.Namespace) -> AppConfig:
    path = Path(args.config) if args.config else preset_path(_PRESETS[args.command])
    cfg = config_mod.load_config(path)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or os.environ.get("CROWDMARKET_OUT") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _ledger_path(cfg: AppConfig, out: Path) -> Path:
    p = Path(cfg.market.ledger_path)
    return p if p.is_absolute() else out / p


def _displacement(cfg: AppConfig) -> float:
    return abs(cfg.scenario.mu_adv - cfg.scenario.mu)


def _consensus_spec(cfg: AppConfig, name: str) -> ExperimentSpec:
    return ExperimentSpec(
        name=name,
        base=cfg.scenario,
        sweep=(("adversary_fraction", cfg.experiment.shares()),),
        pipeline=Pipeline.CONSENSUS_ONLY,
        attack=AttackModel.poisoning(0.0, cfg.scenario.mu_adv),
    )


def _fig6_spec(cfg: AppConfig) -> ExperimentSpec:
    return ExperimentSpec(
        name="fig6",
        base=cfg.scenario,
        sweep=(
            ("adversary_fraction", cfg.experiment.shares()),
            ("rep_high_prob", cfg.experiment.rep_shares),
        ),
        pipeline=Pipeline.VOTING_PLUS_CONSENSUS,
        attack=AttackModel.poisoning(0.0, cfg.scenario.mu_adv),
    )


def _emit(result, out: Path, name: str, plots: bool, heatmap: bool = False) -> None:
    write_trials_csv(out / f"{name}_trials.csv", result.trial_rows)
    write_summary_csv(out / f"{name}_summary.csv", result.summary)
    if plots:
        from . import plots as plots_mod

        if heatmap:
            plots_mod.save_breakdown_heatmap(
                result.summary, out / f"{name}_heatmap.png",
                "Combined election + mean-median under data poisoning",
            )
        else:
            plots_mod.save_deviation_plot(
                result.summary, out / f"{name}_deviation.png",
                f"Consensus deviation under data poisoning ({name})",
            )
    print(f"[{name}] wrote {out / (name + '_summary.csv')}")


def cmd_fig4(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    result = run_fig4(_consensus_spec(cfg, "fig4"), jobs=args.jobs)
    _emit(result, out, "fig4", not args.no_plots)
    disp = _displacement(cfg)
    if args.check:
        med = [p for p in result.summary if p.strategy == "median"]
        low_ok = all(p.mean_deviation < 0.1 * disp for p in med if p.adversary_share <= 0.45)
        high_ok = all(p.mean_deviation > 0.9 * disp for p in med if p.adversary_share >= 0.55)
        if not (low_ok and high_ok):
            raise ThresholdFailure("median breakdown structure outside expected windows")
        print("[fig4] median breakdown checks passed")
    return EXIT_OK


def cmd_fig5(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    result = run_fig5(
        _consensus_spec(cfg, "fig5"),
        jobs=args.jobs,
        breakdown_threshold=cfg.experiment.breakdown_threshold,
    )
    _emit(result, out, "fig5", not args.no_plots)
    for strategy, point in result.breakdowns.items():
        print(f"[fig5] practical breakdown ({strategy}): {100 * point:.0f}%")
    if args.check:
        triplets = result.breakdowns["mean_median_fixed"]
        sqrt = result.breakdowns["mean_median_sqrt"]
        if not (0.10 <= triplets <= 0.20 and 0.05 <= sqrt <= 0.15):
            raise ThresholdFailure(
                f"breakdowns outside windows: triplets={triplets:.2f}, sqrt={sqrt:.2f}"
            )
        print("[fig5] breakdown windows passed")
    return EXIT_OK


def cmd_fig6(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    result = run_fig6(
        _fig6_spec(cfg),
        jobs=args.jobs,
        breakdown_threshold=cfg.experiment.breakdown_threshold,
    )
    _emit(result, out, "fig6", not args.no_plots, heatmap=True)
    for key, point in sorted(result.breakdowns.items()):
        print(f"[fig6] practical breakdown ({key}): {100 * point:.0f}%")
    if args.check:
        bad = [
            (key, point)
            for key, point in result.breakdowns.items()
            if float(key.split("=")[1]) >= 0.5 and not 0.4 <= point <= 0.6
        ]
        if bad:
            raise ThresholdFailure(f"high-reputation breakdowns outside [40%, 60%]: {bad}")
        print("[fig6] breakdown windows passed")
    return EXIT_OK


def cmd_consensus(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    scenario = cfg.scenario
    base = SeededRng(scenario.seed)
    cons = scenario.consensus
    if cons is None:
        raise ConfigError("consensus command requires a [scenario.consensus] section")
    rows = []
    for trial in range(scenario.trials):
        rng = derive_trial_rng(base, trial)
        values = rng.gen.normal(scenario.mu, scenario.sigma, scenario.n_agents)
        k = round(scenario.n_agents * scenario.adversary_fraction)
        if k:
            values[rng.gen.permutation(scenario.n_agents)[:k]] = scenario.mu_adv
        ledger = PrivacyLedger()
        coalition = [(f"a{i:04d}", float(v)) for i, v in enumerate(values)]
        result = run_consensus(coalition, cons, rng, ledger)
        rows.append(
            ConsensusRow(
                trial=trial,
                strategy=cons.strategy.value,
                n=scenario.n_agents,
                g=result.grouping.g,
                s=result.grouping.s_effective,
                adversary_share=scenario.adversary_fraction,
                value=result.value,
                deviation=abs(result.value - scenario.mu),
            )
        )
    write_consensus_csv(out / "consensus.csv", rows)
    mean_dev = sum(r.deviation for r in rows) / len(rows)
    print(
        f"[consensus] {cons.strategy.value} over {scenario.n_agents} agents, "
        f"{scenario.trials} trials: mean deviation {mean_dev:.4f} "
        f"-> {out / 'consensus.csv'}"
    )
    return EXIT_OK


def cmd_elect(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    scenario = cfg.scenario
    if scenario.voting is None:
        raise ConfigError("elect command requires a [scenario.voting] section")
    rng = SeededRng(scenario.seed)
    agents = build_reputation_population(
        scenario.n_agents, scenario.mu, scenario.sigma, scenario.mu_adv,
        scenario.adversary_fraction, scenario.rep_high_prob,
        scenario.mu_rep, scenario.sigma_rep, rng,
    )
    transcript = []
    groups = elect_committee(agents, scenario.voting, rng, transcript=transcript)
    write_transcript_csv(out / "election.csv", transcript)
    adversaries = {a.id for a in agents if a.is_adversary}
    for i, group in enumerate(groups, start=1):
        marked = [f"{a}*" if a in adversaries else a for a in group]
        print(f"[elect] round {i}: {', '.join(marked)}")
    elected = [a for g in groups for a in g]
    n_adv = sum(1 for a in elected if a in adversaries)
    print(
        f"[elect] {len(elected)} winners, {n_adv} adversarial "
        f"-> {out / 'election.csv'}"
    )
    return EXIT_OK


def cmd_shapley(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    val = cfg.valuation
    if val.data_csv is None:
        raise ConfigError("shapley command requires valuation.data_csv")
    data_path = Path(val.data_csv)
    if not data_path.is_absolute() and cfg.source is not None:
        candidate = cfg.source.parent / data_path
        data_path = candidate if candidate.exists() else data_path
    points = load_datapoints_csv(data_path)
    rng = SeededRng(cfg.scenario.seed)
    if val.objective == "regression":
        shuffled = [points[i] for i in rng.gen.permutation(len(points))]
        n_holdout = max(1, round(len(points) * val.holdout_fraction))
        holdout, train = shuffled[:n_holdout], shuffled[n_holdout:]
        if not train:
            raise ConfigError("holdout_fraction leaves no training points")
        objective = regression_objective(train, holdout)
        valuated = train
    else:
        objective = sum_labels_objective()
        valuated = points
    if len(valuated) <= 16:
        report = shapley_exact(valuated, objective)
    else:
        report = shapley_sampled(valuated, objective, val.samples, rng)
    write_shapley_csv(out / "shapley.csv", report)
    work = assign_work(report, val.max_work)
    units = {w.agent: w.work_units for w in work}
    for agent, psi in sorted(report.values.items(), key=lambda kv: -kv[1]):
        print(f"[shapley] {agent:>10}  psi={psi: .6f}  work_units={units[agent]}")
    print(
        f"[shapley] method={report.method} objective={objective.descriptor!r} "
        f"-> {out / 'shapley.csv'}"
    )
    return EXIT_OK


def cmd_market_demo(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    scenario = cfg.scenario
    rng = SeededRng(scenario.seed)

    # two coalitions in neighbouring quadrants, synthetic linear data
    n_each = max(3, min(6, scenario.n_agents // 2))
    coalitions = []
    batches = []
    audit = AuditLog()
    commitments = {}
    all_ids = [f"q{q}m{i:02d}" for q in (1, 2) for i in range(n_each)]
    oracle = make_honest_oracle(all_ids, {a: int(a[1]) for a in all_ids})
    for q in (1, 2):
        members = tuple(f"q{q}m{i:02d}" for i in range(n_each))
        coalition = SpatialCoalition(
            quadrant=q, members=members, objective="holdout-mse regression", timestamp=0
        )
        points = []
        for member in members:
            features = rng.gen.normal(0, 1, 2)
            label = 2.0 * features[0] + 3.0 * features[1] + rng.gen.normal(0, 0.05)
            points.append(DataPointRef(member, tuple(features), float(label)))
            outcome = verify_agent(
                member, float(label), q, tick=0, now=0, ttl=cfg.market.ttl,
                oracle=oracle, rng=rng, audit=audit,
            )
            if not outcome.admitted:
                raise CrowdMarketError(f"demo agent {member} failed verification")
            commitments[member] = outcome
        coalitions.append(coalition)
        batches.append(points)
    audit.write_csv(out / "verification_audit.csv")

    holdout = []
    for i in range(8):
        features = rng.gen.normal(0, 1, 2)
        holdout.append(
            DataPointRef(
                f"holdout{i}", tuple(features),
                float(2.0 * features[0] + 3.0 * features[1]),
            )
        )
    objective = regression_objective(batches[0], holdout)
    chain = run_work_chain(
        list(zip(coalitions, batches)), [objective], cfg.valuation.max_work, rng
    )
    verify_work_chain(chain)
    report, assignments, receipt = chain[0]

    market = Market()
    # sellers: coalition 2's data, valuated by coalition 1
    first_seller = coalitions[1].members[0]
    commitment = commit(first_seller, batches[1][0].label or 0.0, 2, 0, rng)
    listing = Listing(
        dataset_id="dataset-q2-tick0",
        quadrant=2,
        tick=0,
        provenance=ProvenanceRef(commitment.digest, commitments[first_seller]),
        objective_descriptor=objective.descriptor,
        objective_value=report.grand_value,
        ask_price=10.0,
        metadata=f"{n_each} points, quadrant 2",
    )
    market.list_dataset(listing)
    market.settle_sale(Bid("buyer-001", "dataset-q2-tick0", Right.ACCESS_FULL, 10.0))
    sale = market.settle_sale(Bid("buyer-002", "dataset-q2-tick0", Right.OWNERSHIP, 25.0))
    split = distribute_reward(sale, report)
    market.record_reward(split)
    ledger_path = _ledger_path(cfg, out)
    market.ledger.save(ledger_path)
    write_rewards_csv(out / "rewards.csv", [split])
    write_shapley_csv(out / "shapley.csv", report)

    print(f"[market-demo] work chain: {len(chain)} stage(s), receipts verified")
    for a in assignments:
        print(f"[market-demo]   {a.agent}: psi={report.values[a.agent]: .4f} work={a.work_units}")
    print(f"[market-demo] rewards: " + ", ".join(f"{k}={v:.2f}" for k, v in sorted(split.shares.items())))
    print(f"[market-demo] ledger ({len(market.ledger.records)} records) -> {ledger_path}")
    return EXIT_OK


def cmd_verify_ledger(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    path = _ledger_path(cfg, out)
    if not path.exists():
        raise ConfigError(f"ledger file not found: {path} (run market-demo first?)")
    if not verify_chain_file(path):
        raise CrowdMarketError(f"ledger verification FAILED: {path}")
    ledger = Ledger.load(path)
    print(f"[verify-ledger] OK: {len(ledger.records)} records, chain intact ({path})")
    return EXIT_OK


_COMMANDS = {
    "simulate-fig4": cmd_fig4,
    "simulate-fig5": cmd_fig5,
    "simulate-fig6": cmd_fig6,
    "consensus": cmd_consensus,
    "elect": cmd_elect,
    "shapley": cmd_shapley,
    "market-demo": cmd_market_demo,
    "verify-ledger": cmd_verify_ledger,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdmarket",
        description="Crowd-sourced spatial data market: simulations and protocol demos",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="TOML config path (default: shipped preset)")
        p.add_argument("--out", help="output directory (default: $CROWDMARKET_OUT or ./out)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--jobs", type=int, default=1, help="concurrent trial workers")
        if name.startswith("simulate"):
            p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
            p.add_argument(
                "--check", action="store_true",
                help="exit 3 unless breakdown thresholds land in the expected windows",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ThresholdFailure as exc:
        print(f"threshold check failed: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    except CrowdMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
