"""Cross-lingual embedding transfer, alignment and zero-shot sentiment classification."""

from xlsent.embed_store import EmbeddingTable, NeighborHit
from xlsent.errors import DataFormatError, NumericalError

__version__ = "0.1.0"

__all__ = ["EmbeddingTable", "NeighborHit", "DataFormatError", "NumericalError"]
