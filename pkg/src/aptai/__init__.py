"""Joint acoustic-to-articulatory inversion with phoneme recognition and
alignment, exercised end-to-end on a synthetic articulatory corpus."""

__version__ = "0.1.0"
