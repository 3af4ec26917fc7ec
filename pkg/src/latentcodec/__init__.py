"""Signal compression by searching a quantized latent vector of a fixed generator."""

from .codec import CodecConfig, compress, compress_image, compress_speech, decompress
from .errors import CodecError, FormatError, InputError, NumericalError, ShapeError
from .models import GeneratorModel, SyntheticModelSpec, make_synthetic
from .quantization import Codebook, fit_codebook
from .search import SearchConfig

__version__ = "0.1.0"

__all__ = [
    "Codebook", "CodecConfig", "CodecError", "FormatError", "GeneratorModel", "InputError", "NumericalError",
    "SearchConfig", "ShapeError", "SyntheticModelSpec", "compress", "compress_image", "compress_speech",
    "decompress", "fit_codebook", "make_synthetic",
]
