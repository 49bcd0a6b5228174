import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from core.errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

# Path to config file
CONFIG_FILE_PATH = Path(os.path.dirname(os.path.dirname(__file__))) / "config.yaml"

# Default configuration values
DEFAULT_CONFIG: Dict[str, Any] = {
    "solver": {
        "seed_density": 40.0,  # Newton seeds per unit k
        "newton_tol": 1e-12,  # |dk| stop threshold
        "max_iter": 100,
        "dedup_tol": 1e-7,  # absolute k clustering radius
        "nullspace_tol": 1e-8,  # relative singular value cutoff
        "trace_mode": "auto",  # exact | stochastic | auto
        "probe_count": 30,  # Hutchinson probes per Newton step
        "stochastic_threshold": 2000,  # auto switches to stochastic above this |V|
        "pole_exclusion": 1e-6,  # no seeds this close to n*pi/l
        "certificate_tol": 1e-8,
        "count_check": True,  # inertia count per pole interval, dense sizes only
    },
    "pole_tolerance": 1e-10,  # |sin(k l)| below this is a pole
    "quad_order": 16,  # Gauss-Legendre nodes per edge
    "threads": 1,
    "rng_seed": 0,
    "perturbation": {
        # multiply B by the level degeneracy 2j+1 (literal reading of the
        # first-order condition); false gives the plain -d*r0/|Omega| scaling
        "b_degeneracy_factor": False,
    },
    "cache": {
        "enabled": False,
        "path": "data/spectra.db",
    },
    "logging": {
        "level": "INFO",
        "file": None,
    },
}

# env var -> (dotted key, type)
ENV_OVERRIDES = {
    "METRIQ_THREADS": ("threads", int),
    "METRIQ_LOG_LEVEL": ("logging.level", str),
    "METRIQ_CACHE_PATH": ("cache.path", str),
    "METRIQ_RNG_SEED": ("rng_seed", int),
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _set_dotted(config: Dict[str, Any], key: str, value: Any) -> None:
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {key!r} crosses a non-mapping value")
    node[parts[-1]] = value


def _apply_env(config: Dict[str, Any]) -> Dict[str, Any]:
    for env_name, (key, cast) in ENV_OVERRIDES.items():
        raw = os.getenv(env_name)
        if raw is None or raw == "":
            continue
        try:
            _set_dotted(config, key, cast(raw))
        except ValueError as e:
            raise ConfigError(f"{env_name}={raw!r} is not a valid {cast.__name__}") from e
    return config


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """Load configuration from YAML file or create with defaults if it doesn't exist.

    An explicitly requested ``path`` must exist and parse; the default file is
    recreated when missing and ignored (with an error logged) when corrupt.
    """
    explicit = path is not None
    path = Path(path) if explicit else CONFIG_FILE_PATH

    if not path.exists():
        if explicit:
            raise ConfigError(f"config file not found: {path}")
        save_config(DEFAULT_CONFIG, path)
        return _apply_env(copy.deepcopy(DEFAULT_CONFIG))

    with open(path, "r", encoding="utf-8") as f:
        try:
            config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            if explicit:
                raise ConfigError(f"error parsing config file {path}: {e}") from e
            logger.error("Error parsing config file %s: %s", path, e)
            return _apply_env(copy.deepcopy(DEFAULT_CONFIG))

    if not isinstance(config, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    # Merge with defaults to ensure all keys exist
    return _apply_env(_deep_merge(DEFAULT_CONFIG, config))


def save_config(config: Dict[str, Any], path: Optional[Path] = None) -> None:
    """Save configuration to YAML file."""
    path = Path(path) if path is not None else CONFIG_FILE_PATH
    try:
        with open(path, "w", encoding="utf-8") as f:
            yaml.dump(config, f, default_flow_style=False, sort_keys=True)
    except OSError as e:
        raise ConfigError(f"cannot write config file {path}: {e}") from e


def update_config(key: str, value: Any, path: Optional[Path] = None) -> Dict[str, Any]:
    """Update a specific (dotted) config value and save."""
    config = load_config(path)
    _set_dotted(config, key, value)
    save_config(config, path)
    return config


def solver_config_from(config: Dict[str, Any], **overrides: Any):
    """Build a SolverConfig from the ``solver`` section; keyword overrides win."""
    from core.models import SolverConfig

    section = dict(config.get("solver", {}))
    values = {
        "seed_density": section.get("seed_density"),
        "newton_tol": section.get("newton_tol"),
        "max_iter": section.get("max_iter"),
        "dedup_tol": section.get("dedup_tol"),
        "nullspace_tol": section.get("nullspace_tol"),
        "trace_mode": section.get("trace_mode"),
        "probe_count": section.get("probe_count"),
        "stochastic_threshold": section.get("stochastic_threshold"),
        "pole_exclusion": section.get("pole_exclusion"),
        "certificate_tol": section.get("certificate_tol"),
        "count_check": section.get("count_check"),
        "pole_tol": config.get("pole_tolerance"),
        "quad_order": config.get("quad_order"),
        "threads": config.get("threads"),
        "rng_seed": config.get("rng_seed"),
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    values = {k: v for k, v in values.items() if v is not None}
    try:
        cfg = SolverConfig(**values)
    except TypeError as e:
        raise ConfigError(f"bad solver settings: {e}") from e
    cfg.validate()
    return cfg
