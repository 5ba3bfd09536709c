"""Use-case configuration files.

A config is one YAML document; every key is optional except ``model``::

    name: usecase2
    model: {builtin: usecase2, seed: 0}     # or {manifest: path/to/model.yaml}
    traffic:
      synthetic: {flows: 1000, packets_per_flow: 20, seed: 1,
                  start_spread_ns: 0, interval_mean_ns: 200000}
      # or  pcap: path/to/trace.pcap
    extractor: {granularity: flow, threshold: 20, table_depth: 2048,
                capture: interval_vector, time_unit_ns: 1000}
    features: [13, 21, 36]                  # whole-feature-set numbers
    compile: {k: 16, collab: true}
    clocks: {extractor_hz: 125.0e6, compute_hz: 222.0e6}
    controller: {overhead_cycles: 0}

Relative paths are resolved against the config file's directory. Preset
names (``usecase1``..``usecase3``) may be given instead of a path.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional, Union

import yaml

from . import config
from .compiler.ir import ModelIR
from .compiler.manifest import load_model
from .compiler.models import BUILDERS
from .compiler.schedule import CompileConfig
from .errors import ConfigError, OctoError
from .extractor import ExtractorConfig
from .system import SystemConfig
from .traffic import ParsedHeader, SyntheticFlowSpec, generate_trace, parse_packet, read_pcap

PRESET_DIR = Path(__file__).parent / "presets"
PRESETS = ("usecase1", "usecase2", "usecase3")


@dataclass
class UseCaseConfig:
    name: str
    raw: dict  # the resolved document, the source of the config hash
    base: Path

    # -- derived views ---------------------------------------------------------

    def section(self, key: str) -> dict:
        v = self.raw.get(key) or {}
        if not isinstance(v, dict):
            raise ConfigError(f"{key!r} must be a mapping")
        return v

    @property
    def collab(self) -> bool:
        return bool(self.section("compile").get("collab", True))

    def model_ir(self) -> ModelIR:
        m = self.section("model")
        if "builtin" in m:
            if m["builtin"] not in BUILDERS:
                raise ConfigError(f"unknown builtin model {m['builtin']!r}")
            return BUILDERS[m["builtin"]](int(m.get("seed", 0)))
        if "manifest" in m:
            return load_model(self.base / m["manifest"])
        raise ConfigError("model needs 'builtin' or 'manifest'")

    def extractor_config(self) -> ExtractorConfig:
        return _build(ExtractorConfig, self.section("extractor"), "extractor")

    def compile_config(self) -> CompileConfig:
        c = dict(self.section("compile"))
        if self.extractor_config().granularity == "packet":
            c.setdefault("feature_offset", 0)
        return _build(CompileConfig, c, "compile")

    def system_config(self) -> SystemConfig:
        clocks = self.section("clocks")
        ctrl = self.section("controller")
        feats = self.raw.get("features", [13, 21, 36])
        hz = (float(clocks.get("extractor_hz", config.EXTRACTOR_HZ)),
              float(clocks.get("compute_hz", config.COMPUTE_HZ)))
        if min(hz) <= 0:
            raise ConfigError("clock frequencies must be positive")
        return SystemConfig(extractor=self.extractor_config(), feature_ids=tuple(int(f) for f in feats),
                            compile=self.compile_config(), extractor_hz=hz[0], compute_hz=hz[1],
                            ctrl_overhead=int(ctrl.get("overhead_cycles", 0)))

    def flow_spec(self) -> Optional[SyntheticFlowSpec]:
        t = self.section("traffic")
        if "pcap" in t:
            return None
        s = dict(t.get("synthetic") or {})
        ec = self.extractor_config()
        spec = SyntheticFlowSpec(
            flow_count=int(s.get("flows", 1000)),
            packets_per_flow=int(s.get("packets_per_flow", ec.threshold)),
            size_distribution=tuple(s.get("size_distribution", ("uniform", 64, 1500))),
            interval_distribution=("exponential", float(s.get("interval_mean_ns", 200_000))),
            seed=int(s.get("seed", 0)),
            start_spread_ns=int(s.get("start_spread_ns", 0)),
            reverse_prob=float(s.get("reverse_prob", 0.3)),
            udp_fraction=float(s.get("udp_fraction", 0.3)))
        spec.validate()
        return spec

    def headers(self) -> List[ParsedHeader]:
        ec = self.extractor_config()
        spec = self.flow_spec()
        pkts = read_pcap(self.base / self.section("traffic")["pcap"]) if spec is None else generate_trace(spec)
        return [parse_packet(p, ec.payload_bytes) for p in pkts]

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- overrides -------------------------------------------------------------

    def with_overrides(self, collab: Optional[bool] = None, flows: Optional[int] = None,
                       seed: Optional[int] = None) -> "UseCaseConfig":
        raw = copy.deepcopy(self.raw)
        if collab is not None:
            raw.setdefault("compile", {})["collab"] = collab
        if flows is not None or seed is not None:
            t = raw.setdefault("traffic", {})
            if "pcap" in t:
                raise ConfigError("--flows/--seed apply to synthetic traffic only")
            syn = t.setdefault("synthetic", {})
            if flows is not None:
                syn["flows"] = flows
            if seed is not None:
                syn["seed"] = seed
        out = UseCaseConfig(self.name, raw, self.base)
        out.validate()
        return out

    def validate(self) -> "UseCaseConfig":
        try:
            self.system_config()
            self.flow_spec()
        except OctoError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(values) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_config(source: Union[str, Path]) -> UseCaseConfig:
    """Load a config file, or a shipped preset by name."""
    path = Path(source)
    if str(source) in PRESETS and not path.exists():
        path = PRESET_DIR / f"{source}.yaml"
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if not isinstance(raw, dict) or "model" not in raw:
        raise ConfigError(f"{source}: a config is a mapping with a 'model' key")
    cfg = UseCaseConfig(str(raw.get("name", path.stem)), raw, path.parent.resolve())
    return cfg.validate()
