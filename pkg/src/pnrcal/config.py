"""Run configuration: flat key-value files plus command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration input."""


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.replace(";", ",").split(",") if part.strip())


@dataclass
class RunConfig:
    """Everything a subcommand run needs, validated fail-closed.

    ``mean`` is the mean photon number incident on the detector (for tmsv,
    the combined beam); ``pair_mean`` is the per-mode pair number of the
    two-detector simulation.  ``dark_hz`` requires ``gate_ns`` and overrides
    ``dark`` with dark_hz * gate_ns * 1e-9.
    """

    n_elements: int = 1
    eta: float = 0.2
    dark: float = 1e-4
    xtalk: float = 0.0
    dark_hz: float | None = None
    gate_ns: float | None = None
    source: str = "tmsv"
    mean: float = 0.1
    fock_n: int = 1
    t_min: float = 0.025
    t_max: float = 1.0
    t_count: int = 40
    t_values: tuple[float, ...] | None = None
    trials: int = 1_000_000
    shots: int = 1_000_000
    n_max: int = 20
    tail_tol: float = 1e-12
    scan_mode: str = "analytic"
    means: tuple[float, ...] | None = None
    eta2: float = 0.12
    pair_mean: float = 0.005
    seed: int = 12345
    threads: int = 1
    out: str = "pnrcal_out"

    _PARSERS = {
        "n_elements": int, "eta": float, "dark": float, "xtalk": float,
        "dark_hz": float, "gate_ns": float, "source": str, "mean": float,
        "fock_n": int, "t_min": float, "t_max": float, "t_count": int,
        "t_values": _parse_floats, "trials": int, "shots": int, "n_max": int,
        "tail_tol": float, "scan_mode": str, "means": _parse_floats,
        "eta2": float, "pair_mean": float, "seed": int, "threads": int,
        "out": str,
    }

    def apply(self, key: str, raw: str) -> None:
        parser = self._PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            setattr(self, key, parser(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

    def validate(self) -> None:
        if self.n_elements < 1:
            raise ConfigError("n_elements must be >= 1")
        for name in ("eta", "eta2", "dark", "xtalk"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.source not in ("fock", "smsv", "tmsv", "thermal"):
            raise ConfigError(f"unknown source {self.source!r}")
        if self.mean < 0 or self.pair_mean < 0:
            raise ConfigError("mean photon numbers must be >= 0")
        if self.fock_n < 0:
            raise ConfigError("fock_n must be >= 0")
        if self.scan_mode not in ("analytic", "mc"):
            raise ConfigError(f"scan_mode must be analytic or mc, got {self.scan_mode!r}")
        if self.trials < 1 or self.shots < 1:
            raise ConfigError("trials and shots must be >= 1")
        if self.n_max < 0:
            raise ConfigError("n_max must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.t_count < 1:
            raise ConfigError("t_count must be >= 1")
        for t in self.scan_transmissions():
            if not 0.0 <= t <= 1.0:
                raise ConfigError(f"transmission {t} outside [0, 1]")
        if self.dark_hz is not None:
            if self.gate_ns is None:
                raise ConfigError("dark_hz requires gate_ns (or the --gate-ns flag)")
            self.dark = self.dark_hz * self.gate_ns * 1e-9
            if not 0.0 <= self.dark <= 1.0:
                raise ConfigError(
                    f"dark_hz * gate_ns gives per-gate probability {self.dark}, "
                    "outside [0, 1]"
                )

    def scan_transmissions(self) -> np.ndarray:
        if self.t_values is not None:
            return np.asarray(self.t_values, dtype=float)
        return np.linspace(self.t_min, self.t_max, self.t_count)

    def source_mean(self) -> float:
        return float(self.fock_n) if self.source == "fock" else self.mean


def load_config(
    path: str | None,
    overrides: list[str] | None = None,
    **flag_values,
) -> RunConfig:
    """Build a RunConfig from an optional file, --set overrides, and flags.

    The file format is flat ``key = value`` lines; ``#`` starts a comment.
    Unknown keys are rejected rather than ignored.
    """
    config = RunConfig()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            try:
                config.apply(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        config.apply(key, raw)
    for key, value in flag_values.items():
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config
