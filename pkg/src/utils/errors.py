class ShapeError(ValueError):
    """Raised when images, masks or embeddings have incompatible dimensions."""


class EmptyMaskError(ValueError):
    """Raised when a mask with no set pixel is used in a distance computation."""


class ManifestError(ValueError):
    """Raised when a corpus manifest violates its invariants."""


class BackendError(RuntimeError):
    """Raised when an encoder or generator fails.

    stage names the failing step (e.g. "generate i_tr" or "encode_identity").
    """

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(f"{stage}: {message}" if stage else message)
        self.stage = stage


class PreprocessingError(RuntimeError):
    """Raised when face detection/alignment fails (no face found, unreadable crop)."""
