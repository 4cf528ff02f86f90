"""Error hierarchy for figure rendering."""


class PlotkitError(Exception):
    """Base class for all rendering failures."""


class SchemaError(PlotkitError):
    """The input CSV does not match the expected report schema."""
