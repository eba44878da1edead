"""Exception hierarchy. Each family maps onto one CLI exit status."""
from __future__ import annotations


class MultiplanarError(Exception):
    exit_code = 1


class ConfigError(MultiplanarError):
    exit_code = 1


class DataError(MultiplanarError):
    exit_code = 2


class FormatError(DataError):
    pass


class DegenerateIntensityError(DataError):
    pass


class LabelError(DataError):
    pass


class GeometryError(MultiplanarError):
    exit_code = 3


class OutOfSphereError(GeometryError):
    pass


class DivergenceError(MultiplanarError):
    exit_code = 4
