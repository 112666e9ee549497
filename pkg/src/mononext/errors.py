class ParseError(ValueError):
    """Malformed KITTI label, calibration or config text."""


class ConfigError(RuntimeError):
    """Missing files, empty datasets or mismatched checkpoint configs."""
