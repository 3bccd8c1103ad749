"""Exception type for the trainer package."""


class TrainerError(Exception):
    """Raised for invalid specs, malformed exports, and mode mismatches."""
