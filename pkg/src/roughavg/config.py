"""Experiment configuration and run manifests.

One JSON config file drives every CLI subcommand, with command-line flags
overriding individual fields. Validation names the offending field. A run
manifest records what is needed to reproduce and audit a run: the resolved
config, its hash, the code version, timestamps, every emitted file, and the
stream keys behind each replica.
"""

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import ConfigurationError
from .presets import preset_names

_TUPLE_FIELDS = frozenset({
    "eps_schedule", "probe_lags", "delta_probe_deltas", "delta_probe_grid",
    "probe_xi",
})


@dataclass
class ExperimentConfig:
    """Resolved settings for one run, regardless of subcommand.

    Every field has a sensible default, so a config file only needs the
    fields it wants to change.
    """

    preset: str = "averaging-bench"
    hurst: float = 0.4
    t_end: float = 1.0
    n_coarse: int = 256
    fine_factor: int = 8
    substep_factor: "int | None" = None
    eps: float = 0.01                       # single-solve scale separation
    eps_schedule: tuple = (0.1, 0.03, 0.01)
    delta_override: "float | tuple | None" = None
    replicas: int = 128
    seed: "int | str" = 0
    out_dir: str = "runs"
    sample_kind: str = "fbm"
    sample_dim: int = 1
    fbar_lattice: int = 64
    fbar_replicas: int = 64
    fbar_horizon: float = 50.0
    fbar_burn_in: "float | None" = None
    probe_lags: tuple = (0.0, 0.05, 0.1, 0.2)
    probe_replicas: int = 256
    probe_xi: "tuple | None" = None         # default: the preset's x0
    with_delta_probe: bool = False
    delta_probe_eps: float = 0.01
    delta_probe_deltas: tuple = (0.02, 0.04, 0.08)
    delta_probe_replicas: int = 256
    delta_probe_grid: tuple = (1024, 4)
    xcheck_n_coarse: int = 512
    xcheck_quad_points: int = 2048
    lift_tol: float = 1e-10
    exclusion_budget: float = 0.01
    tolerance_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in _TUPLE_FIELDS:
            value = getattr(self, name)
            if isinstance(value, list):
                setattr(self, name, tuple(value))
        if isinstance(self.delta_override, list):
            self.delta_override = tuple(self.delta_override)

    def validate(self) -> "ExperimentConfig":
        if self.preset not in preset_names():
            raise ConfigurationError(
                f"preset: unknown name {self.preset!r}; available: "
                f"{', '.join(preset_names())}"
            )
        if not (1.0 / 3.0 < self.hurst <= 0.5):
            raise ConfigurationError(
                f"hurst: supported range is (1/3, 1/2], got {self.hurst}"
            )
        if not self.t_end > 0.0:
            raise ConfigurationError(f"t_end: must be positive, got {self.t_end}")
        for name in ("n_coarse", "fine_factor", "sample_dim", "replicas",
                     "fbar_replicas", "probe_replicas",
                     "delta_probe_replicas", "xcheck_n_coarse",
                     "xcheck_quad_points"):
            value = getattr(self, name)
            if not (isinstance(value, int) and value >= 1):
                raise ConfigurationError(
                    f"{name}: must be a positive integer, got {value!r}"
                )
        if self.substep_factor is not None and (
                not isinstance(self.substep_factor, int)
                or self.substep_factor < 1):
            raise ConfigurationError(
                f"substep_factor: must be a positive integer, got "
                f"{self.substep_factor!r}"
            )
        if not 0.0 < self.eps < 1.0:
            raise ConfigurationError(
                f"eps: must lie in (0, 1), got {self.eps}"
            )
        if len(self.eps_schedule) == 0:
            raise ConfigurationError("eps_schedule: schedule is empty")
        if any(not 0.0 < e < 1.0 for e in self.eps_schedule):
            raise ConfigurationError(
                f"eps_schedule: every scale must lie in (0, 1), got "
                f"{list(self.eps_schedule)}"
            )
        if any(b >= a for a, b in zip(self.eps_schedule,
                                      self.eps_schedule[1:])):
            raise ConfigurationError(
                f"eps_schedule: must be strictly decreasing, got "
                f"{list(self.eps_schedule)}"
            )
        if self.sample_kind not in ("fbm", "bm"):
            raise ConfigurationError(
                f"sample_kind: expected 'fbm' or 'bm', got {self.sample_kind!r}"
            )
        if self.fbar_lattice < 2:
            raise ConfigurationError(
                f"fbar_lattice: need at least 2 points, got {self.fbar_lattice}"
            )
        if not self.fbar_horizon > 0.0:
            raise ConfigurationError(
                f"fbar_horizon: must be positive, got {self.fbar_horizon}"
            )
        if not 0.0 < self.delta_probe_eps < 1.0:
            raise ConfigurationError(
                f"delta_probe_eps: must lie in (0, 1), got "
                f"{self.delta_probe_eps}"
            )
        if len(self.delta_probe_deltas) == 0 or any(
                d <= 0.0 for d in self.delta_probe_deltas):
            raise ConfigurationError(
                "delta_probe_deltas: need positive block lengths"
            )
        if (len(self.delta_probe_grid) != 2
                or any(not isinstance(v, int) or v < 1
                       for v in self.delta_probe_grid)):
            raise ConfigurationError(
                "delta_probe_grid: expected (n_coarse, fine_factor) "
                f"positive integers, got {self.delta_probe_grid!r}"
            )
        if not 0.0 <= self.exclusion_budget < 1.0:
            raise ConfigurationError(
                f"exclusion_budget: must lie in [0, 1), got "
                f"{self.exclusion_budget}"
            )
        if not isinstance(self.tolerance_overrides, dict):
            raise ConfigurationError(
                "tolerance_overrides: expected a mapping of name -> number"
            )
        return self

    @classmethod
    def field_names(cls) -> "tuple[str, ...]":
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.field_names())
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(
                f"config: unknown field {unknown[0]!r}; known fields are "
                f"{', '.join(sorted(known))}"
            )
        return cls(**data)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config: no such file {path!r}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(
                f"config: {path!r} is not valid JSON ({exc})"
            ) from None
        if not isinstance(data, dict):
            raise ConfigurationError(
                f"config: {path!r} must hold a JSON object of fields"
            )
        return cls.from_mapping(data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(clean) - set(self.field_names()))
        if unknown:
            raise ConfigurationError(f"config: unknown field {unknown[0]!r}")
        return dataclasses.replace(self, **clean)

    def as_dict(self) -> dict:
        data = dataclasses.asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    def config_hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True,
                               separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def run_dir(self, command: str) -> str:
        return os.path.join(self.out_dir,
                            f"{command}-{self.config_hash()[:12]}")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def code_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


@dataclass
class RunManifest:
    """Audit record for one run directory.

    The manifest is written as soon as the run starts (marked incomplete)
    and rewritten with the artifact list once every output landed, so an
    interrupted run leaves an explicit incomplete marker behind.
    """

    command: str
    config: dict
    config_hash: str
    code_version: str
    created_utc: str
    finished_utc: "str | None" = None
    artifacts: "list[str]" = field(default_factory=list)
    seed_ledger: "list[dict]" = field(default_factory=list)
    complete: bool = False

    MANIFEST_NAME = "manifest.json"

    @classmethod
    def start(cls, command: str, config: ExperimentConfig,
              seed_ledger: "list[dict] | None" = None) -> "RunManifest":
        return cls(
            command=command,
            config=config.as_dict(),
            config_hash=config.config_hash(),
            code_version=code_version(),
            created_utc=_utc_now(),
            seed_ledger=seed_ledger or [],
        )

    def payload(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "created_utc": self.created_utc,
            "finished_utc": self.finished_utc,
            "artifacts": self.artifacts,
            "seed_ledger": self.seed_ledger,
            "complete": self.complete,
        }

    def write(self, run_dir: str) -> str:
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, self.MANIFEST_NAME)
        with open(path, "w") as fh:
            json.dump(self.payload(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    def finish(self, run_dir: str, artifacts: "list[str]") -> str:
        """Record every artifact (relative to run_dir) and mark complete."""
        names = set(artifacts)
        names.add(self.MANIFEST_NAME)
        self.artifacts = sorted(names)
        self.finished_utc = _utc_now()
        self.complete = True
        return self.write(run_dir)
