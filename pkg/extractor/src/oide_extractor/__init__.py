"""Image-to-embedding extraction for the origin identification engine."""

__version__ = "0.1.0"

from .encoder import Encoder, EncoderConfig, load_checkpoint, save_checkpoint  # noqa: F401
from .pipeline import MODEL_FAMILIES, ExtractJob, ExtractReport, extract  # noqa: F401
