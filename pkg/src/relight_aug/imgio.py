"""8-bit PNG persistence for float images in [0, 1]."""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 by round-to-nearest."""
    arr = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def save_png(image: np.ndarray, path) -> None:
    """Write an HxWx3 float image in [0, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    PILImage.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG as an HxWx3 float64 image in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def resize_image(image: np.ndarray, size) -> np.ndarray:
    """Bilinear-resize a float image to `size` (int for square, or (h, w)).

    Resampling happens in float32 per channel, so no 8-bit quantization is
    introduced. No-op when the image is already the requested size.
    """
    arr = np.asarray(image, dtype=np.float64)
    h, w = (size, size) if isinstance(size, int) else (int(size[0]), int(size[1]))
    if arr.shape[0] == h and arr.shape[1] == w:
        return arr
    channels = []
    for c in range(arr.shape[2]):
        im = PILImage.fromarray(arr[:, :, c].astype(np.float32), mode="F")
        im = im.resize((w, h), resample=PILImage.Resampling.BILINEAR)
        channels.append(np.asarray(im, dtype=np.float64))
    return np.stack(channels, axis=2)
