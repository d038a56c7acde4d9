"""Config-file handling: YAML with prior.* keys, overridden by CLI flags."""

from __future__ import annotations

import numpy as np
import yaml

from .errors import ConfigError
from .panel import ReturnPanel
from .priors import PriorConfig


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return data


def kappa_vector(panel: ReturnPanel, class_kappa: dict[str, float] | None) -> np.ndarray | None:
    """Per-factor kappa tilts: config class values override the panel metadata."""
    if class_kappa:
        unknown = set(class_kappa) - {"bond", "stock", "nontradable"}
        if unknown:
            raise ConfigError(f"unknown factor classes in prior.kappa: {sorted(unknown)}")
        kappa = np.array([
            float(class_kappa.get(meta.asset_class, 0.0)) for meta in panel.factor_meta
        ])
    else:
        kappa = panel.kappa
    if np.allclose(kappa, 0.0):
        return None
    if abs(float(kappa.sum())) > 1e-12:
        raise ConfigError(
            f"kappa tilts must sum to 0 across the zoo, got {kappa.sum():.3e}; "
            "rebalance the per-class values for this factor composition"
        )
    return kappa


def prior_config_from(config: dict, panel: ReturnPanel, **overrides) -> PriorConfig:
    """Build a PriorConfig with precedence flags > config file > defaults."""
    prior = dict(config.get("prior", {}))
    fields = {
        "r": prior.get("r", 0.001),
        "a_omega": prior.get("a_omega", 1.0),
        "b_omega": prior.get("b_omega", 1.0),
        "psi": prior.get("psi"),
        "prior_sr_fraction": prior.get("sr_fraction"),
        "intercept_precision": prior.get("c", 1e-6),
        "include_intercept": prior.get("include_intercept", True),
        "level_factor_mode": prior.get("level_factor_mode", False),
        "psi_from_sample": prior.get("psi_from_sample", False),
    }
    for key, value in overrides.items():
        if value is not None:
            fields[key] = value
    if fields["psi"] is not None and fields["prior_sr_fraction"] is not None:
        # flags may override a config-file psi with a Sharpe fraction or vice versa
        if overrides.get("prior_sr_fraction") is not None:
            fields["psi"] = None
        elif overrides.get("psi") is not None:
            fields["prior_sr_fraction"] = None
    if fields["psi"] is None and fields["prior_sr_fraction"] is None:
        fields["prior_sr_fraction"] = 0.8
    kappa = kappa_vector(panel, prior.get("kappa"))
    return PriorConfig(kappa=kappa, **fields)
