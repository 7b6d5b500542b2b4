# spectralab/runconfig.py
"""Versioned JSON experiment configs and the run manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable

from . import config
from .disorder import DisorderSpec
from .errors import ConfigurationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MANIFEST_FILENAME = "manifest.json"

EXPERIMENT_NAMES = (
    "sample-spectrum",
    "dos",
    "levelstats",
    "wegner",
    "minami",
    "decorrelate",
    "independence",
    "heavytail",
    "check-perturbation",
    "check-determinants",
    "laplace-check",
    "gradient-separation",
)

# fields that do not change any computed value
_UNHASHED = ("workers", "output_dir")


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


@dataclass
class ExperimentConfig:
    experiment: str
    disorder: DisorderSpec = field(default_factory=lambda: DisorderSpec.uniform(0.5, 1.5))
    n_sites: int = 101
    sizes: list[int] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    windows: list[list[float]] = field(default_factory=list)
    n_samples: int = 1000
    master_seed: int = 0
    workers: int | None = None
    output_dir: str = config.OUT_DIR
    checkpoint_interval: int = config.CHECKPOINT_INTERVAL
    localization_gate: float | None = config.LOCALIZATION_GATE
    allow_low_energy: bool = False
    params: dict[str, Any] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    # ---- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["disorder"] = self.disorder.to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ExperimentConfig":
        """Validate everything, then build; all problems are reported together."""
        if not isinstance(raw, dict):
            raise ConfigurationError("config must be a JSON object")
        problems: list[str] = []
        known = {f for f in cls.__dataclass_fields__}
        for key in sorted(set(raw) - known):
            problems.append(f"{key}: unknown field")

        def get(key: str, default: Any) -> Any:
            return raw.get(key, default)

        schema = get("schema_version", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            problems.append(f"schema_version: unsupported version {schema!r} (expected {SCHEMA_VERSION})")

        experiment = get("experiment", None)
        if experiment not in EXPERIMENT_NAMES:
            problems.append(f"experiment: unknown experiment {experiment!r}; valid names: {', '.join(EXPERIMENT_NAMES)}")

        disorder = None
        try:
            disorder = DisorderSpec.from_dict(get("disorder", {"kind": "UniformInterval", "alpha0": 0.5, "beta0": 1.5}))
        except ConfigurationError as exc:
            problems.append(f"disorder: {exc}")

        n_sites = get("n_sites", 101)
        if not _is_int(n_sites) or n_sites < 3:
            problems.append(f"n_sites: must be an integer >= 3 (got {n_sites!r})")

        sizes = get("sizes", [])
        if not isinstance(sizes, list) or not all(_is_int(s) and s >= 3 for s in sizes):
            problems.append(f"sizes: must be a list of integers >= 3 (got {sizes!r})")

        energies = get("energies", [])
        if not isinstance(energies, list) or not all(_is_number(e) for e in energies):
            problems.append(f"energies: must be a list of numbers (got {energies!r})")

        windows = get("windows", [])
        if not isinstance(windows, list) or not all(
            isinstance(w, list) and len(w) == 2 and all(_is_number(x) for x in w) and w[0] < w[1] for w in windows
        ):
            problems.append(f"windows: must be a list of [a, b] pairs with a < b (got {windows!r})")

        n_samples = get("n_samples", 1000)
        if not _is_int(n_samples) or n_samples < 1:
            problems.append(f"n_samples: must be an integer >= 1 (got {n_samples!r})")

        seed = get("master_seed", 0)
        if not _is_int(seed) or not 0 <= seed < 2**64:
            problems.append(f"master_seed: must be a 64-bit unsigned integer (got {seed!r})")

        workers = get("workers", None)
        if workers is not None and (not _is_int(workers) or workers < 1):
            problems.append(f"workers: must be null or an integer >= 1 (got {workers!r})")

        output_dir = get("output_dir", config.OUT_DIR)
        if not isinstance(output_dir, str) or not output_dir:
            problems.append(f"output_dir: must be a non-empty path (got {output_dir!r})")

        interval = get("checkpoint_interval", config.CHECKPOINT_INTERVAL)
        if not _is_int(interval) or interval < 1:
            problems.append(f"checkpoint_interval: must be an integer >= 1 (got {interval!r})")

        gate = get("localization_gate", config.LOCALIZATION_GATE)
        if gate is not None and (not _is_number(gate) or gate < 0):
            problems.append(f"localization_gate: must be null or a number >= 0 (got {gate!r})")

        allow_low = get("allow_low_energy", False)
        if not isinstance(allow_low, bool):
            problems.append(f"allow_low_energy: must be true or false (got {allow_low!r})")

        params = get("params", {})
        if not isinstance(params, dict):
            problems.append(f"params: must be an object (got {params!r})")

        if not problems:
            problems.extend(_experiment_problems(experiment, energies, windows, sizes, params))
        if problems:
            raise ConfigurationError("invalid experiment config", problems)

        return cls(
            experiment=experiment,
            disorder=disorder,
            n_sites=n_sites,
            sizes=list(sizes),
            energies=[float(e) for e in energies],
            windows=[[float(a), float(b)] for a, b in windows],
            n_samples=n_samples,
            master_seed=seed,
            workers=workers,
            output_dir=output_dir,
            checkpoint_interval=interval,
            localization_gate=float(gate) if gate is not None else None,
            allow_low_energy=allow_low,
            params=dict(params),
            schema_version=schema,
        )

    def param(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _experiment_problems(experiment: str, energies: list, windows: list, sizes: list,
                         params: dict[str, Any]) -> list[str]:
    needs_energies = {"wegner": 1, "decorrelate": 2, "independence": 1, "levelstats": 1, "gradient-separation": 2}
    problems = []
    need = needs_energies.get(experiment)
    if need and len(energies) < need:
        problems.append(f"energies: {experiment} needs at least {need} energ{'y' if need == 1 else 'ies'}")
    if experiment == "independence" and windows and len(windows) != len(energies):
        problems.append("windows: independence needs one window per energy")
    if experiment == "check-perturbation" and not sizes:
        problems.append("sizes: check-perturbation needs at least one size")
    if experiment == "minami" and not params.get("intervals"):
        problems.append("params.intervals: minami needs at least one interval [a, b]")
    if experiment == "decorrelate" and not params.get("L_list"):
        problems.append("params.L_list: decorrelate needs a list of L values")
    return problems


def apply_overrides(raw: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``dotted.path=value`` overrides; values are JSON, else plain strings."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigurationError(f"override {item!r} has an empty key")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = value
    return out


def read_raw_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return raw


def load_config(path: str | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    return ExperimentConfig.from_dict(apply_overrides(read_raw_config(path), overrides))


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    experiment: str
    config_hash: str
    code_version: str
    config_path: str | None = None
    overrides: list[str] = field(default_factory=list)
    started_at: str = field(default_factory=utc_now)
    finished_at: str | None = None
    status: str = "running"
    chunks: dict[str, list[int]] = field(default_factory=dict)

    def save(self, path: str) -> None:
        """Atomic write: temp file in the same directory, then os.replace."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(asdict(self), f, indent=2, sort_keys=True)
                f.write("\n")
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
        return cls(**raw)
