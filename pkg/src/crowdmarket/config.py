"""TOML scenario/experiment configuration with strict key checking.

Every recognised key maps onto a dataclass field; anything else is a hard
error naming the offending key (and its line, when it can be found in the
source text) so typos never silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .consensus import ConsensusConfig, Strategy
from .core import ScenarioConfig
from .errors import ConfigError
from .voting import VotingConfig


@dataclass(frozen=True)
class ExperimentConfig:
    adversary_shares: tuple[float, ...] | None = None
    adversary_share_step: float = 0.02
    rep_shares: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    breakdown_threshold: float = 0.5

    def __post_init__(self):
        if self.adversary_share_step <= 0 or self.adversary_share_step > 1:
            raise ConfigError("experiment.adversary_share_step must lie in (0, 1]")
        if self.breakdown_threshold <= 0:
            raise ConfigError("experiment.breakdown_threshold must be > 0")

    def shares(self) -> tuple[float, ...]:
        if self.adversary_shares is not None:
            return self.adversary_shares
        step = self.adversary_share_step
        count = round(1.0 / step)
        return tuple(round(i * step, 10) for i in range(count + 1))


@dataclass(frozen=True)
class ValuationSettings:
    data_csv: str | None = None
    objective: str = "regression"
    holdout_fraction: float = 0.3
    samples: int = 2000
    max_work: int = 10

    def __post_init__(self):
        if self.objective not in ("regression", "sum_labels"):
            raise ConfigError(
                f"valuation.objective must be 'regression' or 'sum_labels', got {self.objective!r}"
            )
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ConfigError("valuation.holdout_fraction must lie in (0, 1)")
        if self.samples < 1:
            raise ConfigError("valuation.samples must be >= 1")
        if self.max_work < 1:
            raise ConfigError("valuation.max_work must be >= 1")


@dataclass(frozen=True)
class MarketSettings:
    ledger_path: str = "ledger.ndjson"
    ttl: int = 10

    def __post_init__(self):
        if self.ttl < 0:
            raise ConfigError("market.ttl must be >= 0")


@dataclass(frozen=True)
class AppConfig:
    scenario: ScenarioConfig
    experiment: ExperimentConfig
    valuation: ValuationSettings
    market: MarketSettings
    source: Path | None = None

    def with_seed(self, seed: int) -> "AppConfig":
        return dataclasses.replace(
            self, scenario=dataclasses.replace(self.scenario, seed=seed)
        )


_SCENARIO_KEYS = {
    "n_agents", "mu", "sigma", "adversary_fraction", "mu_adv",
    "rep_high_prob", "mu_rep", "sigma_rep", "trials", "seed",
}
_CONSENSUS_KEYS = {"strategy", "min_group_size"}
_VOTING_KEYS = {
    "winners_per_round", "rounds", "solver_tolerance", "max_iterations", "penalty_rho",
}
_EXPERIMENT_KEYS = {
    "adversary_shares", "adversary_share_step", "rep_shares", "breakdown_threshold",
}
_VALUATION_KEYS = {"data_csv", "objective", "holdout_fraction", "samples", "max_work"}
_MARKET_KEYS = {"ledger_path", "ttl"}


def _find_line(text: str, key: str) -> int | None:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0]
        if stripped.strip().startswith(key) or f"[{key}]" in stripped:
            return lineno
    return None


def _check_keys(table: dict, allowed: set[str], prefix: str, text: str) -> None:
    for key in table:
        if key not in allowed:
            line = _find_line(text, key)
            where = f" (line {line})" if line else ""
            raise ConfigError(f"unknown configuration key {prefix}{key!r}{where}")


def loads_config(text: str, source: Path | None = None) -> AppConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    _check_keys(data, {"scenario", "experiment", "valuation", "market"}, "", text)

    scenario_tbl = dict(data.get("scenario", {}))
    consensus_tbl = scenario_tbl.pop("consensus", {})
    voting_tbl = scenario_tbl.pop("voting", {})
    _check_keys(scenario_tbl, _SCENARIO_KEYS, "scenario.", text)
    _check_keys(consensus_tbl, _CONSENSUS_KEYS, "scenario.consensus.", text)
    _check_keys(voting_tbl, _VOTING_KEYS, "scenario.voting.", text)
    _check_keys(data.get("experiment", {}), _EXPERIMENT_KEYS, "experiment.", text)
    _check_keys(data.get("valuation", {}), _VALUATION_KEYS, "valuation.", text)
    _check_keys(data.get("market", {}), _MARKET_KEYS, "market.", text)

    if "n_agents" not in scenario_tbl:
        raise ConfigError("missing required key scenario.n_agents")

    consensus = None
    if consensus_tbl:
        tbl = dict(consensus_tbl)
        if "strategy" in tbl:
            try:
                tbl["strategy"] = Strategy(tbl["strategy"])
            except ValueError:
                raise ConfigError(
                    f"scenario.consensus.strategy must be one of "
                    f"{[s.value for s in Strategy]}, got {tbl['strategy']!r}"
                ) from None
        consensus = ConsensusConfig(**tbl)
    voting = VotingConfig(**voting_tbl) if voting_tbl else None

    experiment_tbl = dict(data.get("experiment", {}))
    for key in ("adversary_shares", "rep_shares"):
        if key in experiment_tbl:
            experiment_tbl[key] = tuple(float(v) for v in experiment_tbl[key])

    return AppConfig(
        scenario=ScenarioConfig(**scenario_tbl, consensus=consensus, voting=voting),
        experiment=ExperimentConfig(**experiment_tbl),
        valuation=ValuationSettings(**data.get("valuation", {})),
        market=MarketSettings(**data.get("market", {})),
        source=source,
    )


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return loads_config(path.read_text(), source=path)
