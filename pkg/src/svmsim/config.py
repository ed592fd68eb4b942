"""Platform and calibration configuration.

Two dataclasses describe a simulated system: :class:`PlatformConfig` holds the
hardware design points (cluster count, SPM geometry, TLB sizes, ...) and
:class:`CalibrationConfig` holds the timing constants that make the model
cycle-approximate (DRAM latency, interconnect bandwidth, walk depth, ...).

Configs round-trip through a small flat text format::

    # desk machine
    [platform]
    n_clusters = 4
    interconnect = noc

    [calibration]
    dram_base_latency = 8

Unknown keys and malformed values are errors.  Values that are structurally
fine but off the supported design-point menu (say ``n_clusters = 6``) only
produce warnings, so exploratory sweeps stay possible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields


class ConfigError(Exception):
    """Raised for structurally invalid configuration input."""


# Supported design-point menu per platform field.  Values outside these sets
# simulate fine but are flagged with a warning diagnostic.
PLATFORM_MENU: dict[str, tuple] = {
    "n_clusters": (1, 2, 4, 8),
    "interconnect": ("bus", "noc"),
    "pes_per_cluster": (2, 4, 8),
    "fpu_mode": ("private", "shared", "off"),
    "intdsp_mode": ("private", "shared"),
    "l1_spm_banks": (4, 8, 16),
    "l1_spm_kib": (32, 64, 128, 256),
    "l2_spm_kib": (32, 64, 128, 256),
    "icache_design": ("single_ported", "multi_ported"),
    "icache_kib": (2, 4, 8),
    "icache_banks": (2, 4, 8),
    "rab_l1_slots": (4, 8, 16, 32, 64),
    "rab_l2_entries": (0, 256, 512, 1024, 2048),
    "rab_l2_assoc": (16, 32, 64),
    "rab_l2_banks": (1, 2, 4, 8),
}

_ENUM_FIELDS = {"interconnect", "fpu_mode", "intdsp_mode", "icache_design"}


@dataclass
class PlatformConfig:
    """Hardware design point.  Defaults are the large-SoC reference build."""

    n_clusters: int = 8
    interconnect: str = "bus"
    pes_per_cluster: int = 8
    fpu_mode: str = "off"          # config surface only; no timing effect
    intdsp_mode: str = "private"   # config surface only; no timing effect
    l1_spm_banks: int = 16
    l1_spm_kib: int = 256
    l2_spm_kib: int = 256
    icache_design: str = "single_ported"
    icache_kib: int = 8
    icache_banks: int = 8
    rab_l1_slots: int = 32
    rab_l2_entries: int = 1024
    rab_l2_assoc: int = 32
    rab_l2_banks: int = 4


@dataclass
class CalibrationConfig:
    """Timing constants.  All values must be strictly positive."""

    dram_base_latency: int = 8
    dram_beat_bytes: int = 8
    dram_beat_cycles: int = 1
    bus_bandwidth: int = 16              # aggregate bytes/cycle
    noc_link_bandwidth: int = 16         # per-cluster-link bytes/cycle
    host_copy_bytes_per_cycle: int = 1
    lds_rewrite_cycles_per_node: int = 20
    l2_ways_per_cycle: int = 8
    miss_queue_depth: int = 16
    ptw_levels: int = 2
    wake_latency: int = 2
    rab_config_write_latency: int = 2
    dma_channels: int = 4
    offload_descriptor_cycles: int = 500
    clock_ratio: float = 1.0


@dataclass
class Diagnostic:
    severity: str  # "error" | "warning"
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.key}: {self.message}"


@dataclass
class ParsedConfig:
    platform: PlatformConfig
    calibration: CalibrationConfig
    warnings: list[Diagnostic] = field(default_factory=list)


def validate(platform: PlatformConfig, calibration: CalibrationConfig | None = None) -> list[Diagnostic]:
    """Return diagnostics for a config.  Errors mean the config cannot run."""
    diags: list[Diagnostic] = []

    def err(key: str, msg: str) -> None:
        diags.append(Diagnostic("error", key, msg))

    def warn(key: str, msg: str) -> None:
        diags.append(Diagnostic("warning", key, msg))

    p = platform
    if p.n_clusters < 1:
        err("n_clusters", "must be >= 1")
    if p.pes_per_cluster < 2:
        err("pes_per_cluster", "must be >= 2 (one worker plus the miss handler)")
    for key in ("l1_spm_banks", "l1_spm_kib", "l2_spm_kib", "icache_kib",
                "icache_banks", "rab_l1_slots", "rab_l2_assoc", "rab_l2_banks"):
        if getattr(p, key) < 1:
            err(key, "must be >= 1")
    if p.rab_l2_entries < 0:
        err("rab_l2_entries", "must be >= 0 (0 disables the L2 TLB)")
    elif p.rab_l2_entries:
        group = p.rab_l2_assoc * p.rab_l2_banks
        if group > 0 and p.rab_l2_entries % group != 0:
            err("rab_l2_entries",
                f"{p.rab_l2_entries} not divisible by assoc*banks = {group}")

    for key, menu in PLATFORM_MENU.items():
        value = getattr(p, key)
        if key in _ENUM_FIELDS:
            if value not in menu:
                err(key, f"{value!r} not one of {menu}")
        elif not any(d.key == key and d.severity == "error" for d in diags):
            if value not in menu:
                warn(key, f"{value} is off the supported menu {menu}")

    if calibration is not None:
        c = calibration
        for f in fields(CalibrationConfig):
            value = getattr(c, f.name)
            if not value > 0:
                err(f.name, "must be strictly positive")

    return diags


def _parse_value(section: str, key: str, raw: str) -> object:
    if section == "platform":
        if key in _ENUM_FIELDS:
            return raw
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    # calibration
    if key == "clock_ratio":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def parse_config(text: str) -> ParsedConfig:
    """Parse a config document.  Raises :class:`ConfigError` on structural
    problems; menu deviations come back as warnings on the result."""
    platform = PlatformConfig()
    calibration = CalibrationConfig()
    known = {
        "platform": {f.name for f in fields(PlatformConfig)},
        "calibration": {f.name for f in fields(CalibrationConfig)},
    }
    section: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            name = stripped[1:-1].strip()
            if name not in known:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} outside any section")
        if key not in known[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        target = platform if section == "platform" else calibration
        setattr(target, key, _parse_value(section, key, raw))

    diags = validate(platform, calibration)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ConfigError("; ".join(str(d) for d in errors))
    return ParsedConfig(platform, calibration, [d for d in diags if d.severity == "warning"])


def serialize_config(platform: PlatformConfig, calibration: CalibrationConfig) -> str:
    """Render a config document that parses back to the same values."""
    out = ["[platform]"]
    for f in fields(PlatformConfig):
        out.append(f"{f.name} = {getattr(platform, f.name)}")
    out.append("")
    out.append("[calibration]")
    for f in fields(CalibrationConfig):
        out.append(f"{f.name} = {getattr(calibration, f.name)}")
    out.append("")
    return "\n".join(out)


def config_hash(platform: PlatformConfig, calibration: CalibrationConfig) -> str:
    """Stable 12-hex-digit digest of a config, used in result rows."""
    blob = serialize_config(platform, calibration).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def platform_hash32(platform: PlatformConfig) -> int:
    """32-bit platform digest embedded in trace headers."""
    blob = serialize_config(platform, CalibrationConfig()).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")
