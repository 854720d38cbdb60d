"""Worker-centered time tracking engine.

Layered timeline resolution, working-time compliance and wage metrics, a
worker-controlled validation workflow sealing reports onto a hash-chained
ledger, and privacy-preserving reporting, exposed via an HTTP API and CLI.
"""

from shiftledger.timeline import (
    Interval,
    Layer,
    LayeredTimeline,
    Provenance,
    ResolutionStrategy,
    ResolvedCoverage,
    Segment,
    Source,
    StateRegistry,
    TimingEntry,
    coalesce,
    coverage_duration,
    layer_intersection,
    layer_supersede,
    layer_union,
    layer_union_merging,
    resolve,
)

__version__ = "0.1.0"

__all__ = [
    "Interval",
    "Layer",
    "LayeredTimeline",
    "Provenance",
    "ResolutionStrategy",
    "ResolvedCoverage",
    "Segment",
    "Source",
    "StateRegistry",
    "TimingEntry",
    "coalesce",
    "coverage_duration",
    "layer_intersection",
    "layer_supersede",
    "layer_union",
    "layer_union_merging",
    "resolve",
    "__version__",
]
