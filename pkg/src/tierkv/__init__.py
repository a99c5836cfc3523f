"""tierkv: hybrid two-tier attention over a split KV cache.

Recent KV entries live in a bounded window tier attended densely; older
entries are evicted block-wise into a store tier and attended sparsely per
head through a salience-thresholded context cache. The two partial results
merge exactly via log-sum-exp fusion. An analytical roofline model compares
the hybrid against loading offloaded KV entries back for full attention, and
a harness verifies outputs against a 64-bit full-attention oracle.
"""

from .attention import AttentionResult, HeadShape, attend, attend_indexed, logsumexp, merge_states
from .backends import available_backends, get_backend
from .config import EngineConfig, PerfConfig, load_config
from .engine import HybridEngine, LayerState, StepInput, StepOutput, run_sequence
from .errors import ContractError
from .harness import MetricsReport, run_experiment, sweep
from .kv_cache import CacheConfig, KvBlock, WindowCache, offload
from .oracle import OracleResult, full_attention_oracle
from .perf_model import (
    DeviceSpec,
    LinkSpec,
    WorkloadShape,
    attention_cost,
    speedup_heatmap,
    time_hybrid,
    time_offload_baseline,
)
from .sparsifier import ContextCache, HeadGroupTask, StoreTier, pack_head_groups, renormalize, select_salient
from .workload import Workload, WorkloadSpec, gen_workload, load_workload, save_workload

__version__ = "0.1.0"
