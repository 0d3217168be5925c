"""Machine knowledge graphs from BOM data, with substitute-component embeddings."""

__version__ = "0.1.0"
