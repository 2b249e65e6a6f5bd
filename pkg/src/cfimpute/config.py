"""Run configuration: defaults, config-file loading and serialization.

A config file is a YAML (or JSON) mapping whose keys are the ``RunConfig``
field names. The JSON sidecar written next to every result embeds the resolved
config under ``"config"``; passing that sidecar back via ``--config`` reruns
the same computation. Command-line values override file values.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .estimators import ESTIMATORS, EstimatorConfig
from .imputer import Strategy
from .missingness import SCENARIOS, Scenario
from .simlab import PRESETS, SITUATIONS, TABLE_STRATEGY, table_config

COMMANDS = ("simulate", "analyze", "truth")
FAMILY_CHOICES = ("mlr", "bart", "zip")


@dataclass
class RunConfig:
    command: str
    estimator: str = "sequential"
    families: tuple[str, ...] = ("mlr",)
    hyperparameters: dict = field(default_factory=dict)
    scenario: str = "all_complied"
    mice_cycles: int | None = None
    mice_sets: int | None = None
    profiles: str | None = None
    horizon: int | None = None
    B: int | None = None
    seed: int = 0
    preset: str | None = None
    n_sims: int | None = None
    n: int | None = None
    situation: str = "one"
    overrides: dict = field(default_factory=dict)
    n_mc: int = 1_000_000
    strategy: dict | None = None
    df_convention: str = "bplus1"
    input: str | None = None
    schema: dict | None = None
    out: str = "."

    def validate(self) -> "RunConfig":
        checks = [
            (self.command in COMMANDS, f"command must be one of {COMMANDS}"),
            (self.estimator in ESTIMATORS, f"estimator must be one of {ESTIMATORS}"),
            (all(f in FAMILY_CHOICES for f in self.families), f"family must be among {FAMILY_CHOICES}"),
            (self.scenario in SCENARIOS, f"scenario must be one of {SCENARIOS}"),
            (self.preset is None or self.preset in PRESETS, f"preset must be one of {sorted(PRESETS)}"),
            (self.situation in SITUATIONS, f"situation must be one of {SITUATIONS}"),
            (self.command != "analyze" or self.input, "analyze needs --input"),
            (len(self.families) >= 1, "at least one family is needed"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if self.command == "analyze" and len(self.families) != 1:
            raise ConfigError("analyze takes a single family")
        return self

    def resolved(self) -> "RunConfig":
        """Copy with preset-dependent defaults filled in."""
        c = dataclasses.replace(self)
        c.families = tuple(c.families)
        if c.command == "simulate":
            c.preset = c.preset or "desk"
            p = PRESETS[c.preset]
            c.n_sims = p["n_sims"] if c.n_sims is None else c.n_sims
            c.n = p["n"] if c.n is None else c.n
            c.B = p["B"] if c.B is None else c.B
            if c.strategy is None:
                c.strategy = dict(TABLE_STRATEGY)
        else:
            c.B = 50 if c.B is None else c.B
            if c.strategy is None:
                c.strategy = Strategy().to_dict()
        c.strategy = Strategy.from_dict(c.strategy).to_dict()
        if c.scenario == "mice":
            c.mice_cycles = 10 if c.mice_cycles is None else c.mice_cycles
            c.mice_sets = 10 if c.mice_sets is None else c.mice_sets
        return c.validate()

    def estimator_config(self, family: str) -> EstimatorConfig:
        hp = dict(self.hyperparameters)
        if self.command == "simulate" and family == "bart" and not hp:
            hp = dict(table_config("bart").hyperparameters)
        return EstimatorConfig(self.estimator, family, hp if family == "bart" else {}, self.B, self.horizon,
                               self.profiles, Strategy.from_dict(self.strategy), self.df_convention)

    def scenario_obj(self) -> Scenario:
        if self.scenario == "mice":
            return Scenario("mice", self.mice_cycles, self.mice_sets)
        return Scenario(self.scenario)

    def to_dict(self) -> dict:
        """Serializable form; the output folder is left out so reruns elsewhere write identical files."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d["families"] = list(self.families)
        return d


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path) -> dict[str, Any]:
    """Read a YAML/JSON config or a result sidecar (its ``"config"`` entry)."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"config {path} must be a mapping")
    if "config" in doc and isinstance(doc["config"], Mapping):
        doc = doc["config"]
    doc = dict(doc)
    if "family" in doc:
        fam = doc.pop("family")
        doc["families"] = [fam] if isinstance(fam, str) else list(fam)
    unknown = set(doc) - FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def build_config(command: str, file_values: Mapping | None, cli_values: Mapping) -> RunConfig:
    """Merge file values and command-line values (command line wins) into a resolved config."""
    merged = dict(file_values or {})
    merged.update({k: v for k, v in cli_values.items() if v is not None})
    merged["command"] = command
    if "families" in merged:
        merged["families"] = tuple(merged["families"])
    try:
        return RunConfig(**merged).resolved()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
