"""Adapter exception types."""


class ExtractionError(Exception):
    """Base class for adapter failures."""


class UnsupportedArchitectureError(ExtractionError):
    """No identifiable decoder key projection in the model graph."""


class LabelingError(ExtractionError):
    """Token positions could not all be assigned a modality code."""


class BenchmarkError(ExtractionError):
    """Benchmark assets missing or malformed."""
