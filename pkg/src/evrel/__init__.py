"""Event-event relation extraction over a constraint-aware event/pair graph.

The package trains a small relational graph-attention model to classify
temporal and hierarchical relations between event mentions in a document,
with auxiliary losses that push predictions toward reversal and deduction
coherence. Everything runs on a self-contained float64 autodiff engine;
the hot graph kernels have numba and pure-numpy backends.
"""

__version__ = "0.1.0"

from .labels import ALL_LABELS, LabelSpace, reverse  # noqa: F401
