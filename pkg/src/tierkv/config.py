"""Engine and cost-model configuration, loadable from an INI-style file.

Sections: [model] layers/heads/head_dim/scale, [cache] blk_num/blk_size/
alpha/beta, [engine] core_count/batch/seed/oracle_dtype, [gpu]/[cpu]
name/peak_flops/mem_bw, [link] bw/latency, [perf] bytes_per_elem/
core_efficiency/retention_fraction, and optional [workload] keys matching
tierkv.workload.WorkloadSpec (append_events as "step:len,step:len"). Missing
sections or keys keep their defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .attention import HeadShape
from .errors import ContractError
from .kv_cache import CacheConfig
from .perf_model import DEFAULT_CPU, DEFAULT_GPU, DEFAULT_LINK, DeviceSpec, LinkSpec

__all__ = ["EngineConfig", "PerfConfig", "load_config", "default_config_text"]


@dataclass(frozen=True)
class EngineConfig:
    layers: int = 2
    heads: int = 8
    head_dim: int = 64
    scale: float | None = None  # None: 1/sqrt(head_dim)
    cache: CacheConfig = field(default_factory=lambda: CacheConfig(blk_num=8, blk_size=32))
    core_count: int = 8
    batch: int = 1
    seed: int = 0
    oracle_dtype: str = "float64"

    def __post_init__(self):
        if self.layers < 1:
            raise ContractError(f"layers must be >= 1, got {self.layers}")
        if self.core_count < 1:
            raise ContractError(f"core_count must be >= 1, got {self.core_count}")
        if self.batch < 1:
            raise ContractError(f"batch must be >= 1, got {self.batch}")
        if self.oracle_dtype not in ("float32", "float64"):
            raise ContractError(f"oracle_dtype must be float32/float64, got {self.oracle_dtype}")

    @property
    def head_shape(self) -> HeadShape:
        return HeadShape(self.heads, self.head_dim, self.scale)

    def with_(self, **kw) -> "EngineConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class PerfConfig:
    gpu: DeviceSpec = DEFAULT_GPU
    cpu: DeviceSpec = DEFAULT_CPU
    link: LinkSpec = DEFAULT_LINK
    bytes_per_elem: int = 2
    core_efficiency: float = 0.5
    retention_fraction: float = 0.2


def _device(sec, default: DeviceSpec) -> DeviceSpec:
    return DeviceSpec(
        name=sec.get("name", default.name),
        peak_flops=sec.getfloat("peak_flops", default.peak_flops),
        mem_bw=sec.getfloat("mem_bw", default.mem_bw),
    )


def parse_append_events(text: str) -> list[tuple[int, int]]:
    """Parse "step:length,step:length" into [(step, length), ...]."""
    events = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        step, _, length = item.partition(":")
        events.append((int(step), int(length)))
    return events


def load_config(path: str) -> tuple[EngineConfig, PerfConfig, dict]:
    """Read a config file; returns (engine, perf, workload-overrides)."""
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")

    model = cp["model"] if cp.has_section("model") else {}
    cache = cp["cache"] if cp.has_section("cache") else {}
    eng = cp["engine"] if cp.has_section("engine") else {}
    defaults = EngineConfig()
    cache_defaults = defaults.cache

    def geti(sec, key, dflt):
        return int(sec.get(key, dflt)) if hasattr(sec, "get") else dflt

    def getf(sec, key, dflt):
        raw = sec.get(key) if hasattr(sec, "get") else None
        return float(raw) if raw is not None else dflt

    engine = EngineConfig(
        layers=geti(model, "layers", defaults.layers),
        heads=geti(model, "heads", defaults.heads),
        head_dim=geti(model, "head_dim", defaults.head_dim),
        scale=getf(model, "scale", None),
        cache=CacheConfig(
            blk_num=geti(cache, "blk_num", cache_defaults.blk_num),
            blk_size=geti(cache, "blk_size", cache_defaults.blk_size),
            alpha=getf(cache, "alpha", cache_defaults.alpha),
            beta=getf(cache, "beta", cache_defaults.beta),
        ),
        core_count=geti(eng, "core_count", defaults.core_count),
        batch=geti(eng, "batch", defaults.batch),
        seed=geti(eng, "seed", defaults.seed),
        oracle_dtype=eng.get("oracle_dtype", defaults.oracle_dtype)
        if hasattr(eng, "get") else defaults.oracle_dtype,
    )

    perf_defaults = PerfConfig()
    perf_sec = cp["perf"] if cp.has_section("perf") else {}
    perf = PerfConfig(
        gpu=_device(cp["gpu"], DEFAULT_GPU) if cp.has_section("gpu") else DEFAULT_GPU,
        cpu=_device(cp["cpu"], DEFAULT_CPU) if cp.has_section("cpu") else DEFAULT_CPU,
        link=LinkSpec(
            bw=cp["link"].getfloat("bw", DEFAULT_LINK.bw),
            latency=cp["link"].getfloat("latency", DEFAULT_LINK.latency),
        ) if cp.has_section("link") else DEFAULT_LINK,
        bytes_per_elem=geti(perf_sec, "bytes_per_elem", perf_defaults.bytes_per_elem),
        core_efficiency=getf(perf_sec, "core_efficiency", perf_defaults.core_efficiency),
        retention_fraction=getf(perf_sec, "retention_fraction", perf_defaults.retention_fraction),
    )

    workload: dict = {}
    if cp.has_section("workload"):
        sec = cp["workload"]
        for key in ("steps", "prefill_len", "sink_count", "heavy_hitter_count"):
            if key in sec:
                workload[key] = sec.getint(key)
        for key in ("heavy_hitter_boost", "recency_decay", "noise_scale"):
            if key in sec:
                workload[key] = sec.getfloat(key)
        if "append_events" in sec:
            workload["append_events"] = parse_append_events(sec["append_events"])
        if "seed" in sec:
            workload["seed"] = sec.getint("seed")
    return engine, perf, workload


def default_config_text() -> str:
    """A config file with every key at its default, for --help and docs."""
    e, p = EngineConfig(), PerfConfig()
    return (
        "[model]\n"
        f"layers = {e.layers}\nheads = {e.heads}\nhead_dim = {e.head_dim}\n"
        "# scale = 0.125          ; default 1/sqrt(head_dim)\n\n"
        "[cache]\n"
        f"blk_num = {e.cache.blk_num}\nblk_size = {e.cache.blk_size}\n"
        f"alpha = {e.cache.alpha}\nbeta = {e.cache.beta}\n\n"
        "[engine]\n"
        f"core_count = {e.core_count}\nbatch = {e.batch}\nseed = {e.seed}\n"
        f"oracle_dtype = {e.oracle_dtype}\n\n"
        "[gpu]\n"
        f"name = {p.gpu.name}\npeak_flops = {p.gpu.peak_flops}\nmem_bw = {p.gpu.mem_bw}\n\n"
        "[cpu]\n"
        f"name = {p.cpu.name}\npeak_flops = {p.cpu.peak_flops}\nmem_bw = {p.cpu.mem_bw}\n\n"
        "[link]\n"
        f"bw = {p.link.bw}\nlatency = {p.link.latency}\n\n"
        "[perf]\n"
        f"bytes_per_elem = {p.bytes_per_elem}\n"
        f"core_efficiency = {p.core_efficiency}\n"
        f"retention_fraction = {p.retention_fraction}\n\n"
        "[workload]\n"
        "steps = 2048\nprefill_len = 128\nsink_count = 4\n"
        "heavy_hitter_count = 8\nheavy_hitter_boost = 0.75\n"
        "recency_decay = 0.98\nnoise_scale = 0.05\n"
        "# append_events = 512:32,1024:16\n"
    )
