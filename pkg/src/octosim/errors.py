"""Exception hierarchy shared by every simulator component."""


class OctoError(Exception):
    """Base class for all simulator errors."""


# traffic
class MalformedFrame(OctoError):
    pass


class UnsupportedProtocol(OctoError):
    pass


class BadMagic(OctoError):
    pass


class IoError(OctoError, OSError):
    pass


# extractor
class Collision(OctoError):
    pass


class FifoFull(OctoError):
    pass


class OutOfOrderFin(OctoError):
    pass


class CapacityExceeded(OctoError):
    pass


class ProgramError(OctoError):
    """Invalid micro-op program (overlapping lanes, bad widths...)."""


# fabric
class OutOfRange(OctoError):
    pass


class PortConflict(OctoError):
    pass


class OutOfMemory(OctoError):
    pass


class Overlap(OctoError):
    pass


# engines
class RegisterConflict(OctoError):
    pass


class BadIndex(OctoError):
    pass


class HazardError(OctoError):
    """A register was read before the producing unit's latency elapsed."""


class BadAddress(OctoError):
    pass


class StreamTooWide(OctoError):
    pass


class AsmError(OctoError):
    pass


# compiler
class ShapeError(OctoError):
    pass


class UnsupportedLayer(OctoError):
    pass


class CapacityError(OctoError):
    pass


class LayoutError(OctoError):
    pass


# controller / cli
class StaleResult(OctoError):
    pass


class ConfigError(OctoError):
    pass


class OracleMismatch(OctoError):
    pass
