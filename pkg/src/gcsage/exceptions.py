"""Exception hierarchy shared by all modules."""


class GCSageError(Exception):
    """Base class for library errors."""


class InvalidGeometryError(GCSageError, ValueError):
    """Non-finite coordinates, coincident points or malformed shapes."""


class DegenerateEllipsoidError(InvalidGeometryError):
    """Distance budget does not exceed the focal separation."""


class GrazingIncidenceError(InvalidGeometryError):
    """Incidence and departure directions cancel; no reflection normal exists."""


class NoIntersectionError(InvalidGeometryError):
    """Line is parallel to the plane."""


class InvalidInputError(GCSageError, ValueError):
    """Numeric input outside its admissible range."""


class InvalidPathError(GCSageError, ValueError):
    """Path description is inconsistent with the array layout."""


class DegenerateSearchError(GCSageError):
    """An M-step search had no admissible candidate."""


class ScenarioError(GCSageError, ValueError):
    """Scenario or configuration file could not be parsed."""


class ChannelFormatError(GCSageError, ValueError):
    """Channel tensor file is malformed or truncated."""
