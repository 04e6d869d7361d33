"""Shared exception hierarchy.

Every domain failure raised by the pipeline derives from PipelineError so
the CLI can map it to exit code 1; usage problems stay with argparse
(exit code 2).
"""


class PipelineError(Exception):
    """Base class for all pipeline domain errors."""
