"""MLP model: layer stack, scaled tanh, weight init, prediction, checkpoints.

Each layer is a dense (fan_out, fan_in + 1) matrix whose last column holds
the bias weights (a virtual input pinned at 1.0). Training weights are
float32; float64 exists only for gradient-check oracles.
"""

import struct
from dataclasses import dataclass

import numpy as np

A = 1.7159
B = 0.6666

CHECKPOINT_MAGIC = b"DMLP"
CHECKPOINT_VERSION = 1


class SizeMismatch(Exception):
    pass


class CheckpointError(Exception):
    pass


class CorruptHeader(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class PayloadLengthMismatch(CheckpointError):
    pass


@dataclass(frozen=True)
class Architecture:
    """Layer widths, input first, 10-way output last for MNIST runs."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("architecture needs at least input and output sizes")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        return cls(tuple(int(t) for t in text.replace(" ", "").split(",") if t))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in + 1) per layer, bias column included."""
        sizes = self.layer_sizes
        return [(o, i + 1) for i, o in zip(sizes[:-1], sizes[1:])]


def count_weights(arch: Architecture) -> int:
    """Total free parameters: sum over layer pairs of (fan_in + 1) * fan_out."""
    sizes = arch.layer_sizes
    return sum((i + 1) * o for i, o in zip(sizes[:-1], sizes[1:]))


def scaled_tanh(a):
    """Activation y(a) = A tanh(B a) with A=1.7159, B=0.6666."""
    return A * np.tanh(B * a)


def scaled_tanh_derivative(a):
    """dy/da = A B (1 - tanh^2(B a))."""
    t = np.tanh(B * a)
    return A * B * (1.0 - t * t)


@dataclass
class Mlp:
    arch: Architecture
    layers: list[np.ndarray]

    def __post_init__(self):
        shapes = self.arch.layer_shapes()
        got = [w.shape for w in self.layers]
        if got != shapes:
            raise SizeMismatch(f"layer shapes {got} do not chain as {shapes}")

    @property
    def dtype(self):
        return self.layers[0].dtype

    def copy(self) -> "Mlp":
        return Mlp(self.arch, [w.copy() for w in self.layers])

    def astype(self, dtype) -> "Mlp":
        return Mlp(self.arch, [w.astype(dtype) for w in self.layers])


def init_mlp(rng: np.random.Generator, arch: Architecture, dtype=np.float32) -> Mlp:
    """All weights (bias included) i.i.d. uniform in [-0.05, 0.05]."""
    layers = [
        rng.uniform(-0.05, 0.05, size=shape).astype(dtype)
        for shape in arch.layer_shapes()
    ]
    return Mlp(arch, layers)


def forward_batch(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Forward many samples at once: x is (n, fan_in), result (n, n_outputs).

    Batched matmul path for validation/evaluation; the on-line training
    kernels live in deepmlp.kernels.
    """
    x = np.asarray(x, dtype=mlp.dtype)
    if x.ndim != 2 or x.shape[1] != mlp.arch.n_inputs:
        raise SizeMismatch(f"batch shape {x.shape}, want (n, {mlp.arch.n_inputs})")
    for w in mlp.layers:
        a = x @ w[:, :-1].T + w[:, -1]
        x = scaled_tanh(a)
    return x


def rank_outputs(outputs: np.ndarray) -> np.ndarray:
    """Digits ordered by descending activation; ties go to the smaller digit."""
    return np.argsort(-outputs, axis=-1, kind="stable")


def predict(mlp: Mlp, image: np.ndarray) -> list[tuple[int, float]]:
    """Ranked (digit, output activation) list for one input image."""
    x = np.asarray(image, dtype=mlp.dtype).ravel()
    if x.shape[0] != mlp.arch.n_inputs:
        raise SizeMismatch(f"input size {x.shape[0]}, want {mlp.arch.n_inputs}")
    y = forward_batch(mlp, x[None, :])[0]
    order = rank_outputs(y)
    return [(int(d), float(y[d])) for d in order]


@dataclass
class Checkpoint:
    mlp: Mlp
    epoch: int
    validation_error: float
    version: int = CHECKPOINT_VERSION


def save_checkpoint(mlp: Mlp, epoch: int, validation_error: float) -> bytes:
    """Serialize net + metadata: magic, version, sizes, epoch, val error, f32 payload."""
    sizes = mlp.arch.layer_sizes
    head = CHECKPOINT_MAGIC
    head += struct.pack("<H", CHECKPOINT_VERSION)
    head += struct.pack("<I", len(sizes))
    head += struct.pack(f"<{len(sizes)}I", *sizes)
    head += struct.pack("<I", epoch)
    head += struct.pack("<d", validation_error)
    payload = b"".join(
        np.ascontiguousarray(w, dtype="<f4").tobytes() for w in mlp.layers
    )
    return head + payload


def load_checkpoint(data: bytes) -> Checkpoint:
    """Inverse of save_checkpoint; validates magic, version and payload length."""
    if len(data) < 6:
        raise CorruptHeader(f"checkpoint too short for magic+version: {len(data)} bytes")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CorruptHeader(f"bad magic {data[:4]!r}, want {CHECKPOINT_MAGIC!r}")
    (version,) = struct.unpack("<H", data[4:6])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"format version {version}, supported {CHECKPOINT_VERSION}")
    off = 6
    try:
        (n_sizes,) = struct.unpack_from("<I", data, off)
        off += 4
        sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
        off += 4 * n_sizes
        (epoch,) = struct.unpack_from("<I", data, off)
        off += 4
        (val_err,) = struct.unpack_from("<d", data, off)
        off += 8
    except struct.error as e:
        raise CorruptHeader(f"truncated checkpoint header: {e}") from None
    arch = Architecture(tuple(int(s) for s in sizes))
    expect = 4 * count_weights(arch)
    payload = data[off:]
    if len(payload) != expect:
        raise PayloadLengthMismatch(
            f"weight payload {len(payload)} bytes, want {expect} for {arch.layer_sizes}"
        )
    flat = np.frombuffer(payload, dtype="<f4")
    layers = []
    pos = 0
    for shape in arch.layer_shapes():
        n = shape[0] * shape[1]
        layers.append(flat[pos : pos + n].reshape(shape).copy())
        pos += n
    return Checkpoint(Mlp(arch, layers), int(epoch), float(val_err), int(version))
