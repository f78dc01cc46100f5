"""On-line backprop compute kernels: naive serial references plus
tiled-parallel variants realizing a fixed partitioning contract.

The tiled variants mirror a two-stage layout: forward propagation computes
32-wide partial dot products into a partials buffer and reduces them per
neuron in ascending segment order; delta backpropagation stages 32x32
weight patches into a scratch tile with row stride 33 (zero-padded beyond
real neurons) and reduces transposed partials in two stages; the weight
update walks each row in 16-wide staged groups. Lanes beyond fan_in/fan_out
contribute exact zeros, so results are bitwise-reproducible across runs and
lane counts. Reduction order is fixed; naive and tiled agree within
floating-point reassociation error only.

Training accumulates in the weight dtype (float32 by default); float64 is
reserved for the finite-difference gradient oracle.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .network import A, B, Mlp, SizeMismatch


@dataclass(frozen=True)
class TileScheme:
    """Partitioning constants; override only in benchmark mode."""

    segment: int = 32
    tile: int = 32
    staged_stride: int = 33
    update_width: int = 16

    def __post_init__(self):
        if min(self.segment, self.tile, self.update_width) < 1:
            raise ValueError("tile constants must be positive")
        if self.staged_stride < self.tile:
            raise ValueError("staged_stride must cover a full tile row")


DEFAULT_SCHEME = TileScheme()


def num_segments(n: int, width: int) -> int:
    return (n + width - 1) // width


def _check_layer(w: np.ndarray, x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=w.dtype).ravel()
    nin = w.shape[1] - 1
    if x.shape[0] != nin:
        raise SizeMismatch(f"{name} length {x.shape[0]}, layer fan_in {nin}")
    return x


# --- naive serial references -------------------------------------------------


@njit(cache=True)
def _fp_naive(w, x, a, y, A_, B_):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    for j in range(nout):
        acc = a[j]
        for i in range(nin):
            acc += w[j, i] * x[i]
        acc += w[j, nin]  # bias input pinned at 1.0
        a[j] = acc
        y[j] = A_ * np.tanh(B_ * acc)


@njit(cache=True)
def _bp_naive(w, delta_down, a_up, delta_up, A_, B_):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    for i in range(nin):
        acc = delta_up[i]
        for j in range(nout):
            acc += w[j, i] * delta_down[j]
        t = np.tanh(B_ * a_up[i])
        delta_up[i] = acc * (A_ * B_ * (1 - t * t))


@njit(cache=True)
def _update_naive(w, delta, y_in, eta):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    for j in range(nout):
        d = eta * delta[j]
        for i in range(nin):
            w[j, i] += d * y_in[i]
        w[j, nin] += d  # bias neuron, constant activation 1.0


# --- tiled parallel variants -------------------------------------------------


@njit(cache=True, parallel=True)
def _fp_partials(w, x, partials, segment):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    nseg = partials.shape[1]
    for j in prange(nout):
        for s in range(nseg):
            base = s * segment
            top = min(base + segment, nin)
            acc = partials[j, s]
            for i in range(base, top):
                acc += w[j, i] * x[i]
            partials[j, s] = acc


@njit(cache=True, parallel=True)
def _fp_reduce(w, partials, a, y, A_, B_):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    nseg = partials.shape[1]
    for j in prange(nout):
        acc = a[j]
        for s in range(nseg):  # fixed ascending order
            acc += partials[j, s]
        acc += w[j, nin]
        a[j] = acc
        y[j] = A_ * np.tanh(B_ * acc)


@njit(cache=True, parallel=True)
def _bp_partials(w, delta_down, partials, tile, stride):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    n_jtiles = partials.shape[1]
    n_itiles = partials.shape[0] // tile
    for t in prange(n_itiles * n_jtiles):
        ti = t // n_jtiles
        tj = t - ti * n_jtiles
        i0 = ti * tile
        j0 = tj * tile
        scratch = np.zeros(tile * stride, dtype=w.dtype)
        dbuf = np.zeros(tile, dtype=w.dtype)
        jmax = min(tile, nout - j0)
        imax = min(tile, nin - i0)
        for jj in range(jmax):
            dbuf[jj] = delta_down[j0 + jj]
            row = jj * stride
            for ii in range(imax):
                scratch[row + ii] = w[j0 + jj, i0 + ii]
        for ii in range(tile):  # padded lanes read staged zeros
            acc = partials[i0 + ii, tj]
            for jj in range(tile):
                acc += scratch[jj * stride + ii] * dbuf[jj]
            partials[i0 + ii, tj] = acc


@njit(cache=True, parallel=True)
def _bp_reduce(partials, a_up, delta_up, A_, B_):
    nin = delta_up.shape[0]
    n_jtiles = partials.shape[1]
    for i in prange(nin):
        acc = delta_up[i]
        for tj in range(n_jtiles):  # fixed ascending order
            acc += partials[i, tj]
        t = np.tanh(B_ * a_up[i])
        delta_up[i] = acc * (A_ * B_ * (1 - t * t))


@njit(cache=True, parallel=True)
def _update_tiled(w, delta, y_in, eta, width):
    nout = w.shape[0]
    nin = w.shape[1] - 1
    ngroups = (nin + width - 1) // width
    for j in prange(nout):
        d = eta * delta[j]  # repeated factor hoisted once per neuron
        staged = np.zeros(width, dtype=w.dtype)
        for g in range(ngroups):
            base = g * width
            n = min(width, nin - base)
            for k in range(n):
                staged[k] = y_in[base + k]
            for k in range(n):
                w[j, base + k] += d * staged[k]
        w[j, nin] += d


# --- public operations -------------------------------------------------------


def forward_naive(weights: np.ndarray, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Reference forward pass for one layer: returns (pre_activations, outputs)."""
    x = _check_layer(weights, inputs)
    nout = weights.shape[0]
    a = np.zeros(nout, dtype=weights.dtype)
    y = np.zeros(nout, dtype=weights.dtype)
    _fp_naive(weights, x, a, y, weights.dtype.type(A), weights.dtype.type(B))
    return a, y


def fp_partials(weights: np.ndarray, inputs, scheme: TileScheme = DEFAULT_SCHEME) -> np.ndarray:
    """Stage-1 partial dot products, one column per 32-wide input segment."""
    x = _check_layer(weights, inputs)
    nin = weights.shape[1] - 1
    nseg = num_segments(nin, scheme.segment)
    partials = np.zeros((weights.shape[0], nseg), dtype=weights.dtype)
    _fp_partials(weights, x, partials, scheme.segment)
    return partials


def forward_tiled(
    weights: np.ndarray, inputs, scheme: TileScheme = DEFAULT_SCHEME
) -> tuple[np.ndarray, np.ndarray]:
    """Two-stage tiled forward pass; agrees with forward_naive within tolerance."""
    x = _check_layer(weights, inputs)
    partials = fp_partials(weights, x, scheme)
    nout = weights.shape[0]
    a = np.zeros(nout, dtype=weights.dtype)
    y = np.zeros(nout, dtype=weights.dtype)
    _fp_reduce(weights, partials, a, y, weights.dtype.type(A), weights.dtype.type(B))
    return a, y


def target_vector(n_outputs: int, digit: int, dtype=np.float64) -> np.ndarray:
    """+1 at the true class, -1 elsewhere."""
    t = np.full(n_outputs, -1.0, dtype=dtype)
    t[digit] = 1.0
    return t


def output_deltas(outputs: np.ndarray, pre_activations: np.ndarray, digit: int) -> np.ndarray:
    """Output-layer error signal for the sum-of-squares loss with +-1 targets."""
    outputs = np.asarray(outputs)
    t = target_vector(outputs.shape[0], digit, dtype=outputs.dtype)
    a = np.asarray(pre_activations, dtype=outputs.dtype)
    th = np.tanh(outputs.dtype.type(B) * a)
    deriv = outputs.dtype.type(A) * outputs.dtype.type(B) * (1 - th * th)
    return (t - outputs) * deriv


def backprop_deltas_naive(
    weights: np.ndarray, delta_down: np.ndarray, a_up: np.ndarray
) -> np.ndarray:
    """Reference delta backprop through W^T (bias column excluded)."""
    delta_down = np.asarray(delta_down, dtype=weights.dtype).ravel()
    if delta_down.shape[0] != weights.shape[0]:
        raise SizeMismatch(f"delta length {delta_down.shape[0]}, fan_out {weights.shape[0]}")
    nin = weights.shape[1] - 1
    a_up = np.asarray(a_up, dtype=weights.dtype).ravel()
    if a_up.shape[0] != nin:
        raise SizeMismatch(f"pre-activation length {a_up.shape[0]}, fan_in {nin}")
    delta_up = np.zeros(nin, dtype=weights.dtype)
    _bp_naive(weights, delta_down, a_up, delta_up, weights.dtype.type(A), weights.dtype.type(B))
    return delta_up


def bp_partials(
    weights: np.ndarray, delta_down: np.ndarray, scheme: TileScheme = DEFAULT_SCHEME
) -> np.ndarray:
    """Stage-1 transposed partials, padded to whole tiles; padded rows are zero."""
    delta_down = np.asarray(delta_down, dtype=weights.dtype).ravel()
    if delta_down.shape[0] != weights.shape[0]:
        raise SizeMismatch(f"delta length {delta_down.shape[0]}, fan_out {weights.shape[0]}")
    nin = weights.shape[1] - 1
    n_itiles = num_segments(nin, scheme.tile)
    n_jtiles = num_segments(weights.shape[0], scheme.tile)
    partials = np.zeros((n_itiles * scheme.tile, n_jtiles), dtype=weights.dtype)
    _bp_partials(weights, delta_down, partials, scheme.tile, scheme.staged_stride)
    return partials


def backprop_deltas_tiled(
    weights: np.ndarray,
    delta_down: np.ndarray,
    a_up: np.ndarray,
    scheme: TileScheme = DEFAULT_SCHEME,
) -> np.ndarray:
    """Two-stage tiled delta backprop; agrees with the naive reference."""
    nin = weights.shape[1] - 1
    a_up = np.asarray(a_up, dtype=weights.dtype).ravel()
    if a_up.shape[0] != nin:
        raise SizeMismatch(f"pre-activation length {a_up.shape[0]}, fan_in {nin}")
    partials = bp_partials(weights, delta_down, scheme)
    delta_up = np.zeros(nin, dtype=weights.dtype)
    _bp_reduce(partials, a_up, delta_up, weights.dtype.type(A), weights.dtype.type(B))
    return delta_up


def update_weights_naive(weights: np.ndarray, delta: np.ndarray, y_in, eta: float) -> np.ndarray:
    """In-place delta-rule update w += eta * delta_j * y_i (bias sees y=1)."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    y = _check_layer(weights, y_in, "upstream outputs")
    delta = np.asarray(delta, dtype=weights.dtype).ravel()
    if delta.shape[0] != weights.shape[0]:
        raise SizeMismatch(f"delta length {delta.shape[0]}, fan_out {weights.shape[0]}")
    _update_naive(weights, delta, y, weights.dtype.type(eta))
    return weights


def update_weights_tiled(
    weights: np.ndarray, delta: np.ndarray, y_in, eta: float, scheme: TileScheme = DEFAULT_SCHEME
) -> np.ndarray:
    """In-place update in 16-wide staged groups; matches the naive loop."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    y = _check_layer(weights, y_in, "upstream outputs")
    delta = np.asarray(delta, dtype=weights.dtype).ravel()
    if delta.shape[0] != weights.shape[0]:
        raise SizeMismatch(f"delta length {delta.shape[0]}, fan_out {weights.shape[0]}")
    _update_tiled(weights, delta, y, weights.dtype.type(eta), scheme.update_width)
    return weights


def forward_all(mlp: Mlp, inputs, variant: str = "tiled", scheme: TileScheme = DEFAULT_SCHEME):
    """Forward pass through every layer; returns (pre_activations, outputs) lists."""
    fwd = forward_tiled if variant == "tiled" else forward_naive
    x = np.asarray(inputs, dtype=mlp.dtype).ravel()
    pre, out = [], []
    for w in mlp.layers:
        if variant == "tiled":
            a, y = fwd(w, x, scheme)
        else:
            a, y = fwd(w, x)
        pre.append(a)
        out.append(y)
        x = y
    return pre, out


def train_step(
    mlp: Mlp,
    inputs,
    digit: int,
    eta: float,
    variant: str = "tiled",
    scheme: TileScheme = DEFAULT_SCHEME,
) -> np.ndarray:
    """One on-line update: full FP, then full BP of deltas, then all weight
    updates -- three disentangled phases, never interleaved per layer.

    Returns the output activations so callers can track the training error
    for free.
    """
    x0 = np.asarray(inputs, dtype=mlp.dtype).ravel()
    pre, out = forward_all(mlp, x0, variant, scheme)

    deltas = [None] * len(mlp.layers)
    deltas[-1] = output_deltas(out[-1], pre[-1], digit)
    for li in range(len(mlp.layers) - 1, 0, -1):
        if variant == "tiled":
            deltas[li - 1] = backprop_deltas_tiled(mlp.layers[li], deltas[li], pre[li - 1], scheme)
        else:
            deltas[li - 1] = backprop_deltas_naive(mlp.layers[li], deltas[li], pre[li - 1])

    update = update_weights_tiled if variant == "tiled" else update_weights_naive
    for li, w in enumerate(mlp.layers):
        y_in = x0 if li == 0 else out[li - 1]
        if variant == "tiled":
            update(w, deltas[li], y_in, eta, scheme)
        else:
            update(w, deltas[li], y_in, eta)
    return out[-1]


# --- gradient oracle ---------------------------------------------------------


def sse_loss(outputs: np.ndarray, digit: int) -> float:
    """E = 0.5 * sum((y - t)^2) with +-1 targets."""
    t = target_vector(outputs.shape[0], digit, dtype=np.float64)
    d = np.asarray(outputs, dtype=np.float64) - t
    return 0.5 * float(d @ d)


def backprop_gradients(mlp: Mlp, inputs, digit: int) -> list[np.ndarray]:
    """Analytic dE/dw per layer via the naive kernels (gradient, not update)."""
    x0 = np.asarray(inputs, dtype=mlp.dtype).ravel()
    pre, out = forward_all(mlp, x0, variant="naive")
    deltas = [None] * len(mlp.layers)
    deltas[-1] = output_deltas(out[-1], pre[-1], digit)
    for li in range(len(mlp.layers) - 1, 0, -1):
        deltas[li - 1] = backprop_deltas_naive(mlp.layers[li], deltas[li], pre[li - 1])
    grads = []
    for li in range(len(mlp.layers)):
        y_in = x0 if li == 0 else out[li - 1]
        g = np.empty_like(mlp.layers[li])
        g[:, :-1] = -np.outer(deltas[li], y_in)
        g[:, -1] = -deltas[li]
        grads.append(g)
    return grads


def gradient_check(mlp: Mlp, inputs, digit: int, step: float = 1e-5) -> float:
    """Max relative error of the BP gradient vs central finite differences.

    Runs in float64 regardless of the model dtype; denominator is
    max(|g_bp|, |g_fd|, 1e-8). Intended for small nets only.
    """
    net = mlp if mlp.dtype == np.float64 else mlp.astype(np.float64)
    x = np.asarray(inputs, dtype=np.float64).ravel()
    analytic = backprop_gradients(net, x, digit)

    worst = 0.0
    for w, g_bp in zip(net.layers, analytic):
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + step
            _, out_p = forward_all(net, x, variant="naive")
            loss_p = sse_loss(out_p[-1], digit)
            w[idx] = orig - step
            _, out_m = forward_all(net, x, variant="naive")
            loss_m = sse_loss(out_m[-1], digit)
            w[idx] = orig
            g_fd = (loss_p - loss_m) / (2.0 * step)
            denom = max(abs(g_fd), abs(float(g_bp[idx])), 1e-8)
            worst = max(worst, abs(float(g_bp[idx]) - g_fd) / denom)
    return worst
