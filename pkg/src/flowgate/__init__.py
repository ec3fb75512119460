"""TLS service classification with a reject option for unknown services."""

from .core import (
    DatasetSplit,
    FlowRecord,
    FlowStats,
    PacketSeq,
    ServiceTaxonomy,
    derive_flowstats,
    validate_flow,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "FlowRecord", "FlowStats", "PacketSeq",
    "ServiceTaxonomy", "derive_flowstats", "validate_flow", "__version__",
]
