"""padforge: a synthetic-data iris presentation attack detection pipeline.

Stages: seeded iris synthesis (`synthgen`), identity-leakage filtering backed
by an open iris matcher (`matcher`, `leakage`), PAD training and scoring
(`pad`), and DET/AUROC/decidability evaluation with multi-seed statistics
(`metrics`).  The `cli` module wires the stages into reproducible runs.
"""

__version__ = "0.1.0"
