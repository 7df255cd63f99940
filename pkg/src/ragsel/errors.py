"""Base exception for everything this package raises on purpose."""


class RagselError(Exception):
    """Root of the package error hierarchy; the CLI maps these to exit code 1."""
