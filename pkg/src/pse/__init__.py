"""Personalized speech enhancement engine.

Dual-stage enhancement (ERB gain envelope + deep filtering) with optional
speaker-embedding conditioning, plus the training objective, dataset mixing,
and complexity benchmarking needed to study the variants at desk scale.
"""

__version__ = "0.1.0"
