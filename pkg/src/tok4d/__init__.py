"""tok4d: a sparse-4D visual tokenizer.

Images, videos and voxelized 3D assets are patchified into sets of
(coordinate, feature) tokens living in a shared (t, x, y, z) grid, encoded
by a sparse transformer into continuous or finite-scalar-quantized latents,
and decoded back to pixels or Gaussian splats.  Training uses an
adversarial-free loss suite and a four-stage curriculum; long videos stream
through the encoder tile by tile with KV caching.
"""

__version__ = "0.1.0"

from .errors import Tok4dError
from .tokens import Coord4, Modality, TokenSet, canonicalize, check_subspace

__all__ = [
    "Coord4",
    "Modality",
    "TokenSet",
    "Tok4dError",
    "canonicalize",
    "check_subspace",
    "__version__",
]
