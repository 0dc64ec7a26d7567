"""Independent golden test-vector generator for the sketch-to-image
style-transfer kernels, exchanged through the portable tensor format."""

from .emit import emit_goldens
from .verify import IntegrityError, verify_manifest

__all__ = ["emit_goldens", "verify_manifest", "IntegrityError"]
__version__ = "0.1.0"
