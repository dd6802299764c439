"""Doubly robust difference-in-differences under network interference."""

import json

try:
    from . import _netdid as _core
except ImportError:
    import _netdid as _core

run_cli = _core.run_cli
simulate = _core.simulate
shortest_paths = _core.shortest_paths
graph_stats = _core.graph_stats
hac_bandwidth = _core.hac_bandwidth
hac_variance = _core.hac_variance
exposure = _core.exposure
baseline = _core.baseline
read_panel = _core.read_panel
ValidationError = _core.ValidationError
ComputeError = _core.ComputeError


def estimate(panel, **options):
    """Fit both bridges and return the report as a dict.

    `panel` is a dict as returned by `simulate` (keys D, Y0, Y1, X, W, Z, edges).
    """
    text = _core.estimate(panel["D"], panel["Y0"], panel["Y1"], panel["X"], panel["W"], panel["Z"],
                          panel["edges"], **options)
    return json.loads(text)


def monte_carlo(**options):
    return json.loads(_core.monte_carlo(**options))


__all__ = [
    "simulate", "shortest_paths", "graph_stats", "hac_bandwidth", "hac_variance", "exposure",
    "estimate", "baseline", "monte_carlo", "read_panel", "run_cli", "ValidationError", "ComputeError",
]
