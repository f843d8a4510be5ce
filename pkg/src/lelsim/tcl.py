"""Contrastive window embeddings and the pattern statistic they induce.

A trace is cut into overlapping windows; two stochastically augmented
views of each window form a positive pair and a two-layer tanh network
is trained with an InfoNCE loss over cosine similarities.  The trained
encoder maps windows to d-dimensional embeddings whose elementwise mean
and population variance form the 2d-dimensional pattern vector used as
the calibration target.

The network is small enough that backpropagation is written out by hand
(no autodiff dependency), which keeps the gradient exactly checkable
against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lelsim.errors import InvalidArgument
from lelsim.traceio import Trace


@dataclass(frozen=True)
class Window:
    samples: np.ndarray  # (L,) or (L, C)
    origin_index: int

    def flat(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float).ravel()


@dataclass
class Encoder:
    """Two-layer fully connected network: input -> tanh(h) -> d."""

    W1: np.ndarray  # (h, in_dim)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (d, h)
    b2: np.ndarray  # (d,)
    window_length: int
    n_channels: int = 1
    activation: str = "tanh"
    loss_history: list = field(default_factory=list)

    @property
    def in_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[0]


@dataclass(frozen=True)
class PatternVector:
    mean_block: np.ndarray  # (d,)
    var_block: np.ndarray   # (d,) elementwise population variance

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.mean_block, self.var_block])


@dataclass
class TrainConfig:
    d: int = 64
    h: int = 128
    temperature: float = 0.1
    epochs: int = 200
    batch: int = 64
    step_size: float = 1e-2
    scale_range: tuple[float, float] = (0.8, 1.2)
    noise_frac: float = 0.05

    def __post_init__(self):
        if self.d < 1 or self.h < 1 or self.epochs < 1 or self.batch < 2:
            raise InvalidArgument("d, h, epochs >= 1 and batch >= 2 required")
        if self.temperature <= 0:
            raise InvalidArgument("temperature must be > 0")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise InvalidArgument("scale_range must satisfy 0 < lo <= hi")
        if self.noise_frac < 0:
            raise InvalidArgument("noise_frac must be >= 0")


def default_stride(L: int) -> int:
    """Genuinely overlapping default: half the window length."""
    return max(1, L // 2)


def segment_windows(trace: Trace | np.ndarray, L: int, stride: int | None = None
                    ) -> list[Window]:
    """Overlapping windows at origins 0, stride, 2*stride, ..."""
    if isinstance(trace, Trace):
        data = np.column_stack([trace.channels[c] for c in trace.channels])
        if data.shape[1] == 1:
            data = data[:, 0]
    else:
        data = np.asarray(trace, dtype=float)
    if L < 2:
        raise InvalidArgument("L must be >= 2")
    if stride is None:
        stride = default_stride(L)
    if not (1 <= stride <= L):
        raise InvalidArgument("stride must lie in [1, L]")
    n = data.shape[0]
    if n < L:
        raise InvalidArgument(f"trace length {n} shorter than window length {L}")
    return [Window(samples=data[o:o + L].copy(), origin_index=o)
            for o in range(0, n - L + 1, stride)]


def augment(window: Window, scale_range: tuple[float, float], noise_frac: float,
            rng: np.random.Generator) -> tuple[Window, Window]:
    """Two independent views: random amplitude scaling plus additive noise."""
    lo, hi = scale_range
    if not (0 < lo <= hi):
        raise InvalidArgument("scale_range must satisfy 0 < lo <= hi")
    if noise_frac < 0:
        raise InvalidArgument("noise_frac must be >= 0")
    x = np.asarray(window.samples, dtype=float)
    sd = float(np.std(x))
    views = []
    for _ in range(2):
        s = rng.uniform(lo, hi)
        eps = rng.normal(0.0, noise_frac * sd, size=x.shape) if noise_frac > 0 and sd > 0 \
            else np.zeros_like(x)
        views.append(Window(samples=s * x + eps, origin_index=window.origin_index))
    return views[0], views[1]


def _forward(encoder: Encoder, X: np.ndarray):
    H = np.tanh(X @ encoder.W1.T + encoder.b1)
    Z = H @ encoder.W2.T + encoder.b2
    return H, Z


def encode(encoder: Encoder, window: Window) -> np.ndarray:
    """Embedding of one window; deterministic."""
    x = window.flat()
    if x.shape[0] != encoder.in_dim:
        raise InvalidArgument(
            f"window size {x.shape[0]} does not match encoder input {encoder.in_dim}")
    _, z = _forward(encoder, x[None, :])
    return z[0]


def encode_windows(encoder: Encoder, windows: list[Window]) -> np.ndarray:
    """(N, d) embeddings of a window list."""
    X = np.stack([w.flat() for w in windows])
    if X.shape[1] != encoder.in_dim:
        raise InvalidArgument(
            f"window size {X.shape[1]} does not match encoder input {encoder.in_dim}")
    _, Z = _forward(encoder, X)
    return Z


def _normalize_rows(Z: np.ndarray):
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0):
        raise InvalidArgument("zero-norm embedding in contrastive loss")
    return Z / norms[:, None], norms


def contrastive_loss(z1: np.ndarray, z2: np.ndarray, temperature: float) -> float:
    """InfoNCE over cosine similarities; >= 0, and 0 for N = 1."""
    loss, _, _ = _loss_and_embedding_grads(np.asarray(z1, float), np.asarray(z2, float),
                                           temperature)
    return loss


def _loss_and_embedding_grads(z1: np.ndarray, z2: np.ndarray, temperature: float):
    if temperature <= 0:
        raise InvalidArgument("temperature must be > 0")
    if z1.ndim != 2 or z1.shape != z2.shape or z1.shape[0] < 1:
        raise InvalidArgument("z1 and z2 must be equal-shape N x d arrays with N >= 1")
    n = z1.shape[0]
    U, nu = _normalize_rows(z1)
    V, nv = _normalize_rows(z2)
    S = (U @ V.T) / temperature
    S_shift = S - S.max(axis=1, keepdims=True)
    expS = np.exp(S_shift)
    P = expS / expS.sum(axis=1, keepdims=True)
    log_p_pos = np.diag(S_shift) - np.log(expS.sum(axis=1))
    loss = float(-log_p_pos.sum())

    G = (P - np.eye(n)) / temperature
    dU = G @ V
    dV = G.T @ U
    # through row normalization u = z/|z|
    dz1 = (dU - (np.sum(dU * U, axis=1, keepdims=True)) * U) / nu[:, None]
    dz2 = (dV - (np.sum(dV * V, axis=1, keepdims=True)) * V) / nv[:, None]
    return loss, dz1, dz2


def loss_and_gradients(encoder: Encoder, X1: np.ndarray, X2: np.ndarray,
                       temperature: float):
    """Contrastive loss on two view batches and exact weight gradients.

    X1, X2 are (N, in_dim) flattened views; the encoder is shared between
    views, so gradients from both branches add.
    """
    H1, Z1 = _forward(encoder, X1)
    H2, Z2 = _forward(encoder, X2)
    loss, dZ1, dZ2 = _loss_and_embedding_grads(Z1, Z2, temperature)

    grads = {k: np.zeros_like(getattr(encoder, k)) for k in ("W1", "b1", "W2", "b2")}
    for X, H, dZ in ((X1, H1, dZ1), (X2, H2, dZ2)):
        grads["W2"] += dZ.T @ H
        grads["b2"] += dZ.sum(axis=0)
        dH = dZ @ encoder.W2
        dA = dH * (1.0 - H * H)
        grads["W1"] += dA.T @ X
        grads["b1"] += dA.sum(axis=0)
    return loss, grads


def init_encoder(in_dim: int, h: int, d: int, rng: np.random.Generator,
                 window_length: int, n_channels: int = 1) -> Encoder:
    """Glorot-scaled random initialization."""
    W1 = rng.normal(0.0, np.sqrt(2.0 / (in_dim + h)), size=(h, in_dim))
    W2 = rng.normal(0.0, np.sqrt(2.0 / (h + d)), size=(d, h))
    return Encoder(W1=W1, b1=np.zeros(h), W2=W2, b2=np.zeros(d),
                   window_length=window_length, n_channels=n_channels)


def train_encoder(windows: list[Window], cfg: TrainConfig, seed: int) -> Encoder:
    """SGD on the contrastive loss; deterministic for a fixed seed.

    Returns the encoder after cfg.epochs epochs.  The per-epoch mean loss
    history is attached as encoder.loss_history.
    """
    if len(windows) < 2:
        raise InvalidArgument("need at least 2 windows (no negatives otherwise)")
    rng = np.random.default_rng(seed)
    flat = np.stack([w.flat() for w in windows])
    n, in_dim = flat.shape
    L = np.asarray(windows[0].samples).shape[0]
    n_channels = in_dim // L
    encoder = init_encoder(in_dim, cfg.h, cfg.d, rng, window_length=L,
                           n_channels=n_channels)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch):
            idx = order[start:start + cfg.batch]
            if len(idx) < 2:
                continue
            X1, X2 = _augment_batch(flat[idx], cfg, rng)
            loss, grads = loss_and_gradients(encoder, X1, X2, cfg.temperature)
            scale = cfg.step_size / len(idx)
            encoder.W1 -= scale * grads["W1"]
            encoder.b1 -= scale * grads["b1"]
            encoder.W2 -= scale * grads["W2"]
            encoder.b2 -= scale * grads["b2"]
            epoch_loss += loss / len(idx)
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    encoder.loss_history = history
    return encoder


def _augment_batch(X: np.ndarray, cfg: TrainConfig, rng: np.random.Generator):
    lo, hi = cfg.scale_range
    sd = X.std(axis=1, keepdims=True)
    views = []
    for _ in range(2):
        s = rng.uniform(lo, hi, size=(X.shape[0], 1))
        eps = rng.standard_normal(X.shape) * (cfg.noise_frac * sd)
        views.append(s * X + eps)
    return views[0], views[1]


def pattern_vector(embeddings: np.ndarray) -> PatternVector:
    """Elementwise mean and population variance (1/N) of the embeddings."""
    Z = np.asarray(embeddings, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 1:
        raise InvalidArgument("embeddings must be a nonempty N x d array")
    mean = Z.mean(axis=0)
    var = ((Z - mean) ** 2).mean(axis=0)
    return PatternVector(mean_block=mean, var_block=var)


def trace_pattern(encoder: Encoder, trace, L: int, stride: int | None = None
                  ) -> PatternVector:
    """Windows -> embeddings -> pattern vector, in one call."""
    windows = segment_windows(trace, L, stride)
    return pattern_vector(encode_windows(encoder, windows))


def save_encoder(encoder: Encoder, path) -> None:
    """Flat npz record with a shape/activation header."""
    np.savez(path, W1=encoder.W1, b1=encoder.b1, W2=encoder.W2, b2=encoder.b2,
             header=np.array([encoder.window_length, encoder.n_channels,
                              encoder.hidden_dim, encoder.out_dim]),
             activation=np.array(encoder.activation))


def load_encoder(path) -> Encoder:
    with np.load(path, allow_pickle=False) as data:
        header = data["header"]
        return Encoder(W1=data["W1"], b1=data["b1"], W2=data["W2"], b2=data["b2"],
                       window_length=int(header[0]), n_channels=int(header[1]),
                       activation=str(data["activation"]))
