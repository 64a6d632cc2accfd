"""quesera: lottery-style consensus over threshold step broadcasts.

The pieces, bottom up:

- :mod:`quesera.chain` -- hash-chained histories and the priority order.
- :mod:`quesera.wire` -- canonical byte encodings for frames and sets.
- :mod:`quesera.tsb` -- the broadcast contract (R/B/spread) and trace
  validators.
- :mod:`quesera.tlcr` / :mod:`quesera.tlcb` / :mod:`quesera.tlcw` /
  :mod:`quesera.tlcf` -- the four step-broadcast layers.
- :mod:`quesera.qsc` -- the two-step consensus round and its validators.
- :mod:`quesera.netsim` -- deterministic asynchronous simulator with crash
  injection.
- :mod:`quesera.kvstore` -- write-once key-value stores and line protocol.
- :mod:`quesera.qscod` -- client-driven consensus over those stores.
- :mod:`quesera.cli` -- the qsc-sim experiment harness.
"""

from .chain import (
    GENESIS,
    GENESIS_DIGEST,
    ChainError,
    History,
    Proposal,
    best_in,
    is_prefix,
    uniquely_best_in,
)
from .netsim import DeadlockError, Metrics, SimConfig, SimResult, mix64, run
from .qsc import DeliveryRecord, QscState, check_consensus, qsc_round, run_qsc_node
from .tlcb import Tlcb, TlcbConfig, spread_fault_budget, tlcb_check_config
from .tlcf import Tlcf, TlcfConfig, tlcf_configure
from .tlcr import ConfigError, Tlcr, TlcrConfig, TransportIntegrityError, tlcr_configure
from .tlcw import Tlcw, TlcwConfig, tlcw_configure
from .tsb import RunTrace, TsbParams, TsbResult, validate_layer

__version__ = "0.1.0"

__all__ = [
    "GENESIS",
    "GENESIS_DIGEST",
    "ChainError",
    "ConfigError",
    "DeadlockError",
    "DeliveryRecord",
    "History",
    "Metrics",
    "Proposal",
    "QscState",
    "RunTrace",
    "SimConfig",
    "SimResult",
    "Tlcb",
    "TlcbConfig",
    "Tlcf",
    "TlcfConfig",
    "Tlcr",
    "TlcrConfig",
    "Tlcw",
    "TlcwConfig",
    "TransportIntegrityError",
    "TsbParams",
    "TsbResult",
    "best_in",
    "check_consensus",
    "is_prefix",
    "mix64",
    "qsc_round",
    "run",
    "run_qsc_node",
    "spread_fault_budget",
    "tlcb_check_config",
    "tlcf_configure",
    "tlcr_configure",
    "tlcw_configure",
    "uniquely_best_in",
    "validate_layer",
    "__version__",
]
