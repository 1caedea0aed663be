"""Strictly causal streaming engine for full-duplex dialogue behavior.

At a 1-second tick the engine predicts hierarchical speech acts
(high-level intent, low-level interaction act), maintains a sliding-window
graph of second and sentence nodes, selects an evidence chain of anchor
sentences, and emits an evidence-grounded rationale.
"""

__version__ = "0.1.0"
