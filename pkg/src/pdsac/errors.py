"""Shared exception types."""


class ConfigError(Exception):
    """Bad or inconsistent run configuration (CLI exit code 2)."""


class CheckpointError(Exception):
    """Corrupt, truncated, or architecture-incompatible checkpoint."""


class LayoutError(Exception):
    """Bad environment layout file or layout/artifact version mismatch."""


class TrainingFault(Exception):
    """Non-finite loss or gradient during training (CLI exit code 3)."""
