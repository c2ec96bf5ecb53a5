from .link import (
    LinkMonitor,
    LinkState,
    McsTable,
    SlotOutcome,
    default_mcs_table,
    realized_snr_db,
    select_mcs,
    tb_outcome,
    update_link,
)
from .metrics import SLOT_BUCKETS, MetricsRegistry, MetricsServer, serve_metrics

__all__ = [
    "LinkMonitor", "LinkState", "McsTable", "SlotOutcome", "default_mcs_table",
    "realized_snr_db", "select_mcs", "tb_outcome", "update_link",
    "SLOT_BUCKETS", "MetricsRegistry", "MetricsServer", "serve_metrics",
]
