"""Run configuration: one TOML file plus command-line overrides.

A run is fully described by a single config file; --seed and --out flags
override the file's values.  The seed is mandatory and never defaulted
from the clock, so reruns are reproducible by construction.  Unknown
keys are rejected rather than ignored: a typo must fail loudly, not
silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, fields

from .epidemic import EpidemicParams
from .errors import ConfigError
from .experiments import ExperimentConfig
from .observe import EmissionNoise

MAX_SEED = 2**64


@dataclass
class RunConfig:
    """Everything a subcommand needs, resolved and validated."""

    seed: int
    out_dir: str
    threads: int = 0  # 0 means machine parallelism, resolved by the CLI

    # world construction
    n_persons: int = 300
    n_locations: int = 15
    n_homes: int = 8
    days: int = 90
    tau: float = 0.25
    n_initial_infectious: int = 8
    volunteer_fraction: float = 0.10
    discoverable_fraction: float = 0.40
    scan_every: int = 1
    model_file: str | None = None

    epidemic: EpidemicParams = field(
        default_factory=lambda: EpidemicParams(c1=6.5e-4, c2=1.0 / 72.0, c3=2e-5)
    )
    noise: EmissionNoise = field(default_factory=EmissionNoise)

    # inference
    n_particles: int = 200
    sweeps: int = 50
    learn_mobility: bool = False
    horizon_days: int = 14
    prediction_runs: int = 100
    prediction_day: int = 40
    folds: int = 10

    # input locations for commands that read earlier artifacts
    truth_dir: str | None = None
    obs_dir: str | None = None

    # evaluate switches
    run_cross_validate: bool = True
    run_bootstrap: bool = False
    run_contact_test: bool = False
    n_replicates: int = 20
    volunteer_fractions: tuple[float, ...] = (0.10, 0.05, 1.0 / 30.0, 0.01)
    n_permutations: int = 500

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not (0 <= self.seed < MAX_SEED):
            raise ConfigError("seed must fit in 64 bits")
        if not self.out_dir:
            raise ConfigError("output directory must be set")
        if self.threads < 0:
            raise ConfigError("threads must be positive (or 0 for auto)")
        if self.days < 0:
            raise ConfigError("days must be nonnegative")
        for name in ("n_persons", "n_locations", "n_homes", "scan_every",
                     "n_particles", "sweeps", "prediction_runs", "n_replicates",
                     "n_permutations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.tau <= 0 or abs(24.0 / self.tau - round(24.0 / self.tau)) > 1e-9:
            raise ConfigError("tau must be positive and divide 24 hours evenly")
        for name in ("volunteer_fraction", "discoverable_fraction"):
            if not (0.0 < getattr(self, name) <= 1.0):
                raise ConfigError(f"{name} must lie in (0, 1]")
        for frac in self.volunteer_fractions:
            if not (0.0 < frac <= 1.0):
                raise ConfigError("volunteer_fractions must lie in (0, 1]")
        if self.n_initial_infectious < 0 or self.n_initial_infectious > self.n_persons:
            raise ConfigError("n_initial_infectious out of range")
        if self.model_file is not None and not os.path.exists(self.model_file):
            raise ConfigError(f"model file does not exist: {self.model_file}")
        for name in ("truth_dir", "obs_dir"):
            path = getattr(self, name)
            if path is not None and not os.path.isdir(path):
                raise ConfigError(f"{name} does not exist: {path}")

    @property
    def steps_per_day(self) -> int:
        return int(round(24.0 / self.tau))

    @property
    def n_steps(self) -> int:
        return self.days * self.steps_per_day

    def experiment_config(self) -> ExperimentConfig:
        """The evaluation protocol view; validates the protocol constraints."""
        return ExperimentConfig(
            n_persons=self.n_persons,
            n_locations=self.n_locations,
            n_homes=self.n_homes,
            days=self.days,
            volunteer_fraction=self.volunteer_fraction,
            discoverable_fraction=self.discoverable_fraction,
            epidemic=self.epidemic,
            noise=self.noise,
            tau=self.tau,
            n_initial_infectious=self.n_initial_infectious,
            scan_every=self.scan_every,
            n_particles=self.n_particles,
            horizon_days=self.horizon_days,
            folds=self.folds,
            prediction_runs=self.prediction_runs,
            prediction_day=self.prediction_day,
        )

    def config_hash(self) -> str:
        """Digest of the experiment-defining fields.

        threads and out_dir are execution details with no effect on
        results, so they stay out of the hash.
        """
        payload = {}
        for f in fields(self):
            if f.name in ("threads", "out_dir"):
                continue
            value = getattr(self, f.name)
            if isinstance(value, EpidemicParams):
                value = {"c1": value.c1, "c2": value.c2, "c3": value.c3}
            elif isinstance(value, EmissionNoise):
                value = {
                    "sensitivity": value.sensitivity,
                    "specificity": value.specificity,
                    "nearby_sensitivity": value.nearby_sensitivity,
                    "compliance": value.compliance,
                }
            elif isinstance(value, tuple):
                value = list(value)
            payload[f.name] = value
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_SECTION_KEYS = {
    "world": {
        "persons": "n_persons",
        "locations": "n_locations",
        "homes": "n_homes",
        "days": "days",
        "tau": "tau",
        "initial_infectious": "n_initial_infectious",
        "volunteer_fraction": "volunteer_fraction",
        "discoverable_fraction": "discoverable_fraction",
        "scan_every": "scan_every",
        "model_file": "model_file",
    },
    "inference": {
        "particles": "n_particles",
        "sweeps": "sweeps",
        "learn_mobility": "learn_mobility",
        "horizon_days": "horizon_days",
        "prediction_runs": "prediction_runs",
        "prediction_day": "prediction_day",
        "folds": "folds",
    },
    "inputs": {
        "truth_dir": "truth_dir",
        "obs_dir": "obs_dir",
    },
    "evaluate": {
        "cross_validate": "run_cross_validate",
        "bootstrap": "run_bootstrap",
        "contact_test": "run_contact_test",
        "replicates": "n_replicates",
        "volunteer_fractions": "volunteer_fractions",
        "permutations": "n_permutations",
    },
}

_EPIDEMIC_KEYS = {"c1", "c2", "c3"}
_NOISE_KEYS = {"sensitivity", "specificity", "nearby_sensitivity", "compliance"}
_TOP_KEYS = {"seed", "out"} | set(_SECTION_KEYS) | {"epidemic", "noise"}


def _require_table(raw: dict, name: str) -> dict:
    section = raw.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def load_run_config(
    path: str,
    seed_override: int | None = None,
    out_override: str | None = None,
    threads: int = 0,
) -> RunConfig:
    """Parse a TOML config file and apply flag overrides (flags win)."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot open config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys: {sorted(unknown)}")

    kwargs: dict = {}
    for section, mapping in _SECTION_KEYS.items():
        table = _require_table(raw, section)
        bad = set(table) - set(mapping)
        if bad:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(bad)}")
        for key, value in table.items():
            kwargs[mapping[key]] = value

    epi = _require_table(raw, "epidemic")
    bad = set(epi) - _EPIDEMIC_KEYS
    if bad:
        raise ConfigError(f"{path}: unknown keys in [epidemic]: {sorted(bad)}")
    if epi:
        defaults = RunConfig.__dataclass_fields__["epidemic"].default_factory()
        kwargs["epidemic"] = EpidemicParams(
            c1=float(epi.get("c1", defaults.c1)),
            c2=float(epi.get("c2", defaults.c2)),
            c3=float(epi.get("c3", defaults.c3)),
        )

    noi = _require_table(raw, "noise")
    bad = set(noi) - _NOISE_KEYS
    if bad:
        raise ConfigError(f"{path}: unknown keys in [noise]: {sorted(bad)}")
    if noi:
        base = EmissionNoise()
        kwargs["noise"] = EmissionNoise(
            sensitivity=float(noi.get("sensitivity", base.sensitivity)),
            specificity=float(noi.get("specificity", base.specificity)),
            nearby_sensitivity=float(
                noi.get("nearby_sensitivity", base.nearby_sensitivity)
            ),
            compliance=float(noi.get("compliance", base.compliance)),
        )

    if "volunteer_fractions" in kwargs:
        kwargs["volunteer_fractions"] = tuple(
            float(v) for v in kwargs["volunteer_fractions"]
        )

    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("seed is mandatory: set it in the config or pass --seed")
    out_dir = out_override if out_override is not None else raw.get("out")
    if out_dir is None:
        raise ConfigError("output directory is mandatory: set out= or pass --out")

    return RunConfig(seed=seed, out_dir=str(out_dir), threads=threads, **kwargs)
