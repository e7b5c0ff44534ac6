"""Exception types shared across the toolkit."""


class DataError(Exception):
    """A file or dataset is malformed, truncated, or inconsistent."""


class NumericError(Exception):
    """A computation produced non-finite values (divergence, bad gradients)."""
