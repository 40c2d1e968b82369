"""Link scenario description, validation and on-disk config handling.

All quantities are SI base units (Hz, m, s, W, bits). dB values only
appear in the fields whose name ends in ``_db`` / ``_dbw_hz``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml

SPEED_OF_LIGHT = 3e8

_INT_FIELDS = ("num_streams", "layers_tx", "layers_rx", "atoms_tx", "atoms_rx", "rng_seed")
_POSITIVE_FIELDS = (
    "freq", "wavelength", "bandwidth", "tx_power", "pathloss_exponent",
    "ref_distance", "link_distance", "thickness_tx", "thickness_rx",
    "atom_pitch_tx", "atom_pitch_rx", "atom_area_tx", "atom_area_rx",
    "wave_speed_tx", "wave_speed_rx", "packet_mean", "delay_weight",
)
_CHOICES = {
    "los_mode": ("ones", "steering"),
    "d2_path": ("worst", "aligned"),
}


@dataclass(frozen=True)
class LinkScenario:
    """Every scalar parameter of one SIM-aided link.

    Defaults reproduce the simulation table of the reference setup; the
    values it leaves open (path-loss exponent, link distance, arrival
    rate, delay weight, atom pitch, in-stack wave speed, reference
    distance) use common literature values and can be overridden.
    """

    num_streams: int = 3
    layers_tx: int = 3
    layers_rx: int = 3
    atoms_tx: int = 36
    atoms_rx: int = 36
    freq: float = 7e9
    wavelength: float = 0.0214
    bandwidth: float = 1e7
    noise_psd_dbw_hz: float = -210.0
    tx_power: float = 0.01
    rician_factor: float = 20.0
    pathloss_exponent: float = 2.2
    ref_distance: float = 1.0
    # None -> free-space formula 20 log10(4 pi d0 / lambda)
    ref_pathloss_db: float | None = 80.0
    link_distance: float = 100.0
    thickness_tx: float = 0.1
    thickness_rx: float = 0.1
    atom_pitch_tx: float = 0.0107
    atom_pitch_rx: float = 0.0107
    atom_area_tx: float = 0.01
    atom_area_rx: float = 0.01
    wave_speed_tx: float = SPEED_OF_LIGHT
    wave_speed_rx: float = SPEED_OF_LIGHT
    packet_mean: float = 1e8
    arrival_rate: float = 1.0
    wait_budget: float = 0.5
    delay_weight: float = 1.0
    los_mode: str = "ones"
    d2_path: str = "worst"
    rng_seed: int = 0

    # derived quantities -------------------------------------------------
    @property
    def noise_psd(self) -> float:
        """Noise power spectral density in W/Hz."""
        return 10.0 ** (self.noise_psd_dbw_hz / 10.0)

    @property
    def layer_gap_tx(self) -> float:
        return self.thickness_tx / self.layers_tx

    @property
    def layer_gap_rx(self) -> float:
        return self.thickness_rx / self.layers_rx

    @property
    def row_size_tx(self) -> int:
        return math.isqrt(self.atoms_tx)

    @property
    def row_size_rx(self) -> int:
        return math.isqrt(self.atoms_rx)

    def replace(self, **changes: Any) -> "LinkScenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LinkScenario":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise KeyError(f"unknown scenario field(s): {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            kwargs[name] = _coerce(name, value)
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        return None
    if name in _INT_FIELDS:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if name in _CHOICES:
        return str(value)
    return float(value)


def default_scenario() -> LinkScenario:
    return LinkScenario()


def validate(s: LinkScenario) -> list[str]:
    """Return the list of invariant violations (empty when valid)."""
    problems: list[str] = []
    for name in _INT_FIELDS[:-1]:
        if getattr(s, name) < 1:
            problems.append(f"{name} must be >= 1")
    for name, label in (("atoms_tx", "M"), ("atoms_rx", "N")):
        n = getattr(s, name)
        if n >= 1 and math.isqrt(n) ** 2 != n:
            problems.append(f"{label} must be a perfect square")
    if s.atoms_tx < s.num_streams:
        problems.append("M ≥ S violated")
    if s.atoms_rx < s.num_streams:
        problems.append("N ≥ S violated")
    if not s.bandwidth > 0:
        problems.append("B must be positive")
    for name in _POSITIVE_FIELDS:
        if name == "bandwidth":
            continue
        value = getattr(s, name)
        if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
            problems.append(f"{name} must be positive")
    if s.rician_factor < 0:
        problems.append("rician_factor must be non-negative")
    if s.arrival_rate < 0:
        problems.append("arrival_rate must be non-negative")
    if s.wait_budget < 0:
        problems.append("wait_budget must be non-negative")
    if not math.isfinite(s.noise_psd_dbw_hz):
        problems.append("noise_psd_dbw_hz must be finite")
    for name, allowed in _CHOICES.items():
        if getattr(s, name) not in allowed:
            problems.append(f"{name} must be one of {allowed}")
    return problems


def warnings(s: LinkScenario) -> list[str]:
    """Non-fatal inconsistencies worth reporting next to results."""
    out = []
    expected = SPEED_OF_LIGHT / s.freq
    if not math.isclose(s.wavelength, expected, rel_tol=1e-3):
        out.append(
            f"wavelength {s.wavelength:g} m differs from c/f = {expected:g} m"
        )
    return out


def stability_violation(s: LinkScenario, rate: float) -> str | None:
    """Check that service v*B exceeds the offered load delta*l."""
    if rate * s.bandwidth <= s.arrival_rate * s.packet_mean:
        return "unstable: v_data*B must exceed arrival_rate*packet_mean"
    return None


# on-disk format ---------------------------------------------------------------

def dump_scenario(s: LinkScenario, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(s.to_dict(), sort_keys=False))


def load_scenario(path: str | Path, overrides: Iterable[str] = ()) -> LinkScenario:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if "scenario" in data and isinstance(data["scenario"], dict):
        data = data["scenario"]
    base = default_scenario().to_dict()
    base.update(data)
    return apply_overrides(LinkScenario.from_dict(base), overrides)


def apply_overrides(s: LinkScenario, overrides: Iterable[str]) -> LinkScenario:
    """Apply ``field=value`` strings (values parsed as YAML scalars)."""
    changes = {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like field=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        changes[key] = yaml.safe_load(raw)
    if not changes:
        return s
    data = s.to_dict()
    data.update(changes)
    return LinkScenario.from_dict(data)


def seed_sequence(*keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(k) for k in keys])


def make_rng(*keys: int):
    """Independent generator for a tuple of integer keys (seed, index, ...)."""
    return np.random.default_rng(seed_sequence(*keys))
