"""Exception types shared across the fieldcam package."""


class FieldcamError(Exception):
    """Base class for all fieldcam errors."""


# -- file processing -------------------------------------------------------

class EmptyFile(FieldcamError):
    """An operation received a zero-length input where data is required."""


class UnpaddedInput(FieldcamError):
    """Block cipher input whose length is not a multiple of 16 bytes."""


class InvalidEncoding(FieldcamError):
    """Base64 text containing characters outside the standard alphabet."""


class TooShort(FieldcamError):
    """Input shorter than one cipher block."""


class ExceedsModemLimit(FieldcamError):
    """Requested segment size above the modem's 1548-byte publish cap."""


class MalformedHeader(FieldcamError):
    """Transfer header text that does not parse to a segment plan."""


# -- MQTT ------------------------------------------------------------------

class LengthOverflow(FieldcamError):
    """Remaining-length value outside 0..268435455."""


class MalformedPacket(FieldcamError):
    """Byte sequence that is not a valid MQTT 3.1.1 control packet."""


class ProtocolViolation(FieldcamError):
    """A peer broke the MQTT protocol state machine."""


# -- device / modem --------------------------------------------------------

class AlreadyPowered(FieldcamError):
    """power_on issued to a modem that is already running."""


class PoweredOff(FieldcamError):
    """Operation attempted while the power latch is off."""


class CaptureFailed(FieldcamError):
    """Camera stub could not produce a JPEG frame."""


# -- receiver --------------------------------------------------------------

class AuthFailed(FieldcamError):
    """Decode password did not match the configured password."""


class InconsistentTotals(FieldcamError):
    """Reported payload bytes exceed the reported total bytes."""
