"""Binary PGM (P5) output for visual inspection of [-1, 1] images."""

import numpy as np


def encode_pgm(image: np.ndarray) -> bytes:
    """Map a [-1, 1] image to 8-bit gray and encode as P5, maxval 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    gray = np.clip(np.rint((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + gray.tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(image))
