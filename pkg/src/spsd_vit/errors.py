"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates a documented constraint."""


class ShapeError(ValueError):
    """An array argument has the wrong shape for the requested operation."""


class RouteError(ValueError):
    """A classifier route index is outside the valid block range."""


class IngestError(ValueError):
    """An on-disk dataset is malformed (missing file, bad label, bad header)."""
