"""benchrig: a distributed benchmarking platform for model-evaluation workloads.

Manifests describe models and frameworks; a registry tracks agents under
leases; an orchestration server resolves constraints, dispatches evaluations
to agents over a length-prefixed frame protocol, collects multi-level traces
(model / framework / system), and computes analysis reports with exact,
reproducible arithmetic.
"""

__version__ = "0.1.0"
