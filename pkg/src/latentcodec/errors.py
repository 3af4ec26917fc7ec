"""Exception hierarchy shared by all codec modules.

Every error carries the CLI exit code it maps to and the short name of the
module that raised it, so the command-line layer can print a single
machine-parsable diagnostic line without inspecting the exception type.
"""


class CodecError(Exception):
    exit_code = 1
    module = "core"

    def __init__(self, message, *, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class InputError(CodecError):
    """Unreadable input, bad argument or out-of-range parameter."""

    exit_code = 2


class ShapeError(CodecError, ValueError):
    exit_code = 2

    def __init__(self, message, *, layer=None, module=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message, module=module)
        self.layer = layer


class FormatError(CodecError):
    """A binary container (model, codebook, bitstream, image, audio) is malformed."""

    exit_code = 3

    def __init__(self, message, *, block=None, offset=None, module=None):
        self.reason = message
        parts = []
        if block is not None:
            parts.append(f"block={block}")
        if offset is not None:
            parts.append(f"offset={offset}")
        if parts:
            message = f"{message} ({', '.join(parts)})"
        super().__init__(message, module=module)
        self.block = block
        self.offset = offset


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class DigestMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ShapeChainError(FormatError):
    pass


class ModelMismatchError(FormatError):
    """Bitstream was produced with a different generator than the one supplied."""


class NumericalError(CodecError, FloatingPointError):
    exit_code = 4


class TapeError(CodecError, RuntimeError):
    module = "autodiff"
