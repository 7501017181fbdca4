"""Run-wide hyperparameters with defaults, ranges and override parsing."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping


class ConfigError(ValueError):
    """Unknown key or out-of-range value in a parameter override."""


@dataclass(frozen=True)
class Params:
    # grouping
    k: float = 9
    leaders: int = 3
    # interference field
    i_config: float = 2.0
    lambda_base: float = 0.3
    alpha: float = 0.5
    influence_range: float = 5.0
    cost_multiplier: float = 1.5
    # confidence-driven blocking
    tau_c: float = 0.5
    eta_upd: float = 0.5
    fifo_capacity: int = 256
    revalidate_base: int = 10
    # perception and baselines
    sight_range: float = 9.0
    euclid_radius: float = 9.0
    vision_range: float = 9.0
    # intent net training
    learning_rate: float = 5e-4
    batch_size: int = 32
    intent_buffer: int = 10000
    finetune_every: int = 1000

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Params":
        if not overrides:
            return self
        values = {key: coerce(key, value) for key, value in overrides.items()}
        return dataclasses.replace(self, **values)

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


# key -> (type, lower, upper, lower inclusive)
_RANGES: dict[str, tuple[type, float, float, bool]] = {
    "k": (float, 0.0, math.inf, True),
    "leaders": (int, 1, math.inf, True),
    "i_config": (float, 0.0, math.inf, True),
    "lambda_base": (float, 0.0, math.inf, False),
    "alpha": (float, 0.0, math.inf, True),
    "influence_range": (float, 0.0, math.inf, False),
    "cost_multiplier": (float, 0.0, math.inf, True),
    "tau_c": (float, 0.0, 1.0, False),
    "eta_upd": (float, 0.0, 1.0, False),
    "fifo_capacity": (int, 1, math.inf, True),
    "revalidate_base": (int, 1, math.inf, True),
    "sight_range": (float, 0.0, math.inf, False),
    "euclid_radius": (float, 0.0, math.inf, False),
    "vision_range": (float, 0.0, math.inf, False),
    "learning_rate": (float, 0.0, math.inf, False),
    "batch_size": (int, 1, math.inf, True),
    "intent_buffer": (int, 1, math.inf, True),
    "finetune_every": (int, 0, math.inf, True),
}

PARAM_KEYS = frozenset(_RANGES)


def coerce(key: str, value: Any) -> Any:
    """Parse and range-check one override; raises ConfigError."""
    if key not in _RANGES:
        raise ConfigError(f"unknown parameter {key!r}")
    kind, lo, hi, lo_inclusive = _RANGES[key]
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if not math.isfinite(number):
        raise ConfigError(f"{key}: must be finite")
    if kind is int:
        if number != int(number):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        number = int(number)
    elif key == "k" and number == int(number):
        number = int(number)
    too_low = number < lo if lo_inclusive else number <= lo
    # upper bounds are inclusive except for the open unit intervals
    too_high = number > hi or (hi == 1.0 and key == "tau_c" and number >= hi)
    if too_low or too_high:
        bracket = "[" if lo_inclusive else "("
        raise ConfigError(f"{key}={value!r} outside {bracket}{lo}, {hi}]")
    return number
