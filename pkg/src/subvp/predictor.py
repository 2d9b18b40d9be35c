"""Subtitle-aware sequence-to-sequence viewport predictor.

Per input timestep the model sees the ground-truth saliency map, the subtitle
indicator, the navigation tokens of the active subtitle, and the viewport
center encoded as ``(sin phi, cos phi, sin theta, cos theta)``. A small conv
encoder turns maps into ``f_gts``, a stacked LSTM turns token sequences into
``f_nav``; the fused vectors feed an LSTM encoder whose final state seeds an
LSTM decoder that emits the next ``n`` center encodings. Each decoder step
adds a learned correction to its input, so the identity (hold position) is
the starting point of the fit.

Ablation variants remove inputs structurally; their parameters for removed
inputs simply do not exist.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import geometry
from .errors import ShapeError, TrainingError, ValidationError
from .geometry import SphericalCoord
from .nn import checkpoint
from .nn import layers as L
from .nn.optim import AdamState, adam_step

VARIANTS = {
    "full": ("saliency", "indicator", "navigation", "trajectory"),
    "no_subtitle": ("saliency", "trajectory"),
    "trajectory_only": ("trajectory",),
}


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    k_s: int = 16
    k_n: int = 8
    hidden: int = 64
    nav_layers: int = 2
    nav_units: int = 32
    nav_embed: int = 16
    conv_channels: tuple = (8, 16, 32)
    map_width: int = 64
    map_height: int = 32
    vocab_size: int = 20
    m: int = 5
    n: int = 5
    lr: float = 0.001
    epochs: int = 12
    block_steps: int = 4
    block_users: int = 6
    batch_blocks: int = 6
    seed: int = 0
    teacher_forcing: float = 1.0
    weight_averaging: float = 0.99
    weight_decay: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        ints = [self.k_s, self.k_n, self.hidden, self.nav_layers, self.nav_units, self.nav_embed,
                self.map_width, self.map_height, self.vocab_size, self.m, self.n, self.epochs,
                self.block_steps, self.block_users, self.batch_blocks, *self.conv_channels]
        if not 0.0 <= self.weight_averaging < 1.0:
            raise ValidationError("weight_averaging must be a decay in [0, 1)")
        if not self.weight_decay >= 0.0:
            raise ValidationError("weight_decay must be non-negative")
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValidationError("teacher_forcing must be a ratio in [0, 1]")
        if min(ints) < 1 or not self.conv_channels or not self.lr > 0:
            raise ValidationError("model configuration values must be positive")
        scale = 2 ** len(self.conv_channels)
        if self.map_width % scale or self.map_height % scale:
            raise ValidationError(f"map size must be divisible by {scale} for the pooling stack")

    @property
    def components(self):
        return VARIANTS[self.variant]

    @property
    def input_dim(self):
        widths = {"saliency": self.k_s, "indicator": 1, "navigation": self.k_n, "trajectory": 4}
        return sum(widths[c] for c in self.components)

    def to_dict(self):
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def ablation_variants(cfg: ModelConfig):
    """Configs of the three input ablations, sharing every other hyperparameter."""
    return {name: replace(cfg, variant=name) for name in VARIANTS}


# ---------------------------------------------------------------- encodings

def encode_angles(phi, theta):
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.sin(phi), np.cos(phi), np.sin(theta), np.cos(theta)], axis=-1)


def decode_angles(enc):
    """Circle encodings back to valid ``(phi, theta)``, whatever the raw values."""
    enc = np.asarray(enc, dtype=float)
    phi = geometry.wrap_azimuth(np.arctan2(enc[..., 0], enc[..., 1]))
    theta = np.arctan2(np.abs(enc[..., 2]), enc[..., 3])
    return phi, theta


def fuse(f_gts, f_si, f_nav, coord):
    """Concatenate ``(f_gts, f_si, f_nav, C-encoding)`` for one timestep."""
    f_gts = np.asarray(f_gts, dtype=float).ravel()
    f_nav = np.asarray(f_nav, dtype=float).ravel()
    if f_si not in (0, 1):
        raise ValidationError("subtitle indicator must be 0 or 1")
    if f_si == 0 and np.any(f_nav != 0):
        raise ValidationError("navigation features must be zero without a subtitle")
    if isinstance(coord, SphericalCoord):
        c = encode_angles(coord.azimuth, coord.inclination)
    else:
        c = np.asarray(coord, dtype=float).ravel()
        if c.shape != (4,):
            raise ShapeError(f"trajectory encoding must have 4 values, got {c.shape}")
    return np.concatenate([f_gts, [float(f_si)], f_nav, c])


def unfuse(vec, k_s, k_n):
    vec = np.asarray(vec)
    if vec.shape[-1] != k_s + k_n + 5:
        raise ShapeError(f"fused vector of width {vec.shape[-1]} does not match k_s={k_s}, k_n={k_n}")
    return (vec[..., :k_s], vec[..., k_s], vec[..., k_s + 1:k_s + 1 + k_n], vec[..., k_s + 1 + k_n:])


# ---------------------------------------------------------------- windows

@dataclass(eq=False)
class WindowSet:
    """Columnar batch of windows referencing shared map and token-sequence banks.

    ``map_ids`` and ``seq_ids`` are ``(B, m)`` indices into ``maps`` and
    ``sequences`` (sequence 0 is the empty one). ``history`` holds the encoded
    input centers, ``target`` the encoded future centers and
    ``target_angles`` the same as ``(phi, theta)``.
    """

    maps: np.ndarray
    sequences: list
    map_ids: np.ndarray
    seq_ids: np.ndarray
    indicator: np.ndarray
    history: np.ndarray
    target: np.ndarray
    target_angles: np.ndarray
    groups: np.ndarray = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.groups is None:
            self.groups = np.zeros(len(self.map_ids), dtype=np.int64)
        if self.sequences and self.sequences[0] != ():
            raise ValidationError("sequence 0 must be the empty sequence")

    def __len__(self):
        return len(self.map_ids)

    @property
    def m(self):
        return self.map_ids.shape[1]

    @property
    def n(self):
        return self.target.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        info = {k: np.asarray(v)[idx] for k, v in self.info.items()}
        return WindowSet(self.maps, self.sequences, self.map_ids[idx], self.seq_ids[idx],
                         self.indicator[idx], self.history[idx], self.target[idx],
                         self.target_angles[idx], self.groups[idx], info)

    def without_subtitles(self):
        return WindowSet(self.maps, self.sequences, self.map_ids, np.zeros_like(self.seq_ids),
                         np.zeros_like(self.indicator), self.history, self.target,
                         self.target_angles, self.groups, dict(self.info))


def _scatter_rows(grad, inverse, count):
    out = np.zeros((count, grad.shape[-1]), dtype=grad.dtype)
    np.add.at(out, inverse, grad.reshape(-1, grad.shape[-1]))
    return out


# ---------------------------------------------------------------- model

class Seq2SeqModel:
    def __init__(self, config: ModelConfig, params=None):
        self.config = config
        self.params = params if params is not None else self._init(np.random.default_rng(config.seed))

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def _init(self, rng):
        cfg, dt = self.config, np.dtype(self.config.dtype)
        p = {}
        if "saliency" in cfg.components:
            c_in = 1
            for k, c_out in enumerate(cfg.conv_channels, 1):
                p[f"conv{k}.W"] = L.glorot(rng, 9 * c_in, 9 * c_out, (c_out, c_in, 3, 3), dt)
                p[f"conv{k}.b"] = np.zeros(c_out, dt)
                c_in = c_out
            scale = 2 ** len(cfg.conv_channels)
            flat = c_in * (cfg.map_height // scale) * (cfg.map_width // scale)
            p["sal.W"] = L.glorot(rng, flat, cfg.k_s, dtype=dt)
            p["sal.b"] = np.zeros(cfg.k_s, dt)
        if "navigation" in cfg.components:
            p["nav.E"] = L.glorot(rng, cfg.vocab_size + 1, cfg.nav_embed, dtype=dt)
            d_in = cfg.nav_embed
            for k in range(1, cfg.nav_layers + 1):
                self._init_lstm(p, f"nav{k}", d_in, cfg.nav_units, rng, dt)
                d_in = cfg.nav_units
            p["navout.W"] = L.glorot(rng, cfg.nav_units, cfg.k_n, dtype=dt)
            p["navout.b"] = np.zeros(cfg.k_n, dt)
        self._init_lstm(p, "enc", cfg.input_dim, cfg.hidden, rng, dt)
        self._init_lstm(p, "dec", 4, cfg.hidden, rng, dt)
        p["out.W"] = L.glorot(rng, cfg.hidden, 4, dtype=dt)
        p["out.b"] = np.zeros(4, dt)
        return p

    @staticmethod
    def _init_lstm(p, name, d_in, units, rng, dt):
        p[f"{name}.Wx"] = L.glorot(rng, d_in, 4 * units, dtype=dt)
        p[f"{name}.Wh"] = L.glorot(rng, units, 4 * units, dtype=dt)
        p[f"{name}.b"] = np.zeros(4 * units, dt)

    def _lstm(self, name):
        p = self.params
        return p[f"{name}.Wx"], p[f"{name}.Wh"], p[f"{name}.b"]

    # -- saliency encoder
    def encode_saliency(self, maps):
        """``(U, H, W)`` maps to ``(U, k_s)`` embeddings and a backward cache."""
        cfg, p = self.config, self.params
        maps = np.asarray(maps, dtype=self.dtype)
        if maps.shape[1:] != (cfg.map_height, cfg.map_width):
            raise ShapeError(f"saliency maps {maps.shape[1:]} do not match config "
                             f"({cfg.map_height}, {cfg.map_width})")
        x = maps[:, None]
        caches = []
        for k in range(1, len(cfg.conv_channels) + 1):
            x, cc = L.conv2d_forward(x, p[f"conv{k}.W"], p[f"conv{k}.b"])
            x, rc = L.relu_forward(x)
            x, pc = L.maxpool2_forward(x)
            caches.append((cc, rc, pc))
        shape = x.shape
        y, dc = L.dense_forward(x.reshape(len(x), -1), p["sal.W"], p["sal.b"])
        y, tc = L.tanh_forward(y)
        return y, (caches, shape, dc, tc)

    def _saliency_backward(self, dy, cache, grads):
        caches, shape, dc, tc = cache
        dy = L.tanh_backward(dy, tc)
        dx, grads["sal.W"], grads["sal.b"] = L.dense_backward(dy, dc)
        dx = dx.reshape(shape)
        for k in reversed(range(1, len(caches) + 1)):
            cc, rc, pc = caches[k - 1]
            dx = L.maxpool2_backward(dx, pc)
            dx = L.relu_backward(dx, rc)
            dx, grads[f"conv{k}.W"], grads[f"conv{k}.b"] = L.conv2d_backward(dx, cc)
        return dx[:, 0]

    # -- navigation encoder
    def encode_navigation(self, sequences):
        """Token sequences to ``(S, k_n)``; empty sequences give zero rows."""
        cfg, p = self.config, self.params
        out = np.zeros((len(sequences), cfg.k_n), dtype=self.dtype)
        by_len = {}
        for i, seq in enumerate(sequences):
            for tok in seq:
                if not 1 <= tok <= cfg.vocab_size:
                    raise ValidationError(f"token id {tok} outside vocabulary 1..{cfg.vocab_size}")
            if seq:
                by_len.setdefault(len(seq), []).append(i)
        caches = []
        for length, rows in sorted(by_len.items()):
            ids = np.array([sequences[r] for r in rows], dtype=np.int64)
            x, ec = L.embedding_forward(ids, p["nav.E"])
            lcaches = []
            for k in range(1, cfg.nav_layers + 1):
                h0 = np.zeros((len(rows), cfg.nav_units), dtype=self.dtype)
                x, hT, _, lc = L.lstm_forward(x, h0, h0.copy(), *self._lstm(f"nav{k}"))
                lcaches.append(lc)
            y, dc = L.dense_forward(hT, p["navout.W"], p["navout.b"])
            out[rows] = y
            caches.append((rows, ec, lcaches, dc))
        return out, caches

    def _navigation_backward(self, dy, caches, grads):
        cfg = self.config
        for name in ["nav.E", "navout.W", "navout.b"] + [
                f"nav{k}.{w}" for k in range(1, cfg.nav_layers + 1) for w in ("Wx", "Wh", "b")]:
            grads[name] = np.zeros_like(self.params[name])
        for rows, ec, lcaches, dc in caches:
            dh, gW, gb = L.dense_backward(dy[rows], dc)
            grads["navout.W"] += gW
            grads["navout.b"] += gb
            dxs = None
            for k in reversed(range(1, cfg.nav_layers + 1)):
                dxs, _, _, gx, gh, gb = L.lstm_backward(dxs, dh, np.zeros_like(dh), lcaches[k - 1])
                dh = np.zeros_like(dh)
                grads[f"nav{k}.Wx"] += gx
                grads[f"nav{k}.Wh"] += gh
                grads[f"nav{k}.b"] += gb
            grads["nav.E"] += L.embedding_backward(dxs, ec)

    # -- full model
    def _features(self, ws: WindowSet):
        cfg = self.config
        B, m = ws.map_ids.shape
        parts, cache = [], {}
        if "saliency" in cfg.components:
            uniq, inv = np.unique(ws.map_ids, return_inverse=True)
            emb, sc = self.encode_saliency(ws.maps[uniq])
            parts.append(emb[inv.reshape(-1)].reshape(B, m, -1))
            cache["saliency"] = (uniq, inv.reshape(-1), sc)
        if "indicator" in cfg.components:
            parts.append(ws.indicator[..., None].astype(self.dtype))
        if "navigation" in cfg.components:
            uniq, inv = np.unique(ws.seq_ids, return_inverse=True)
            emb, nc = self.encode_navigation([ws.sequences[s] for s in uniq])
            parts.append(emb[inv.reshape(-1)].reshape(B, m, -1))
            cache["navigation"] = (uniq, inv.reshape(-1), nc)
        parts.append(ws.history.astype(self.dtype))
        return np.concatenate(parts, axis=-1), cache

    def _features_backward(self, dx, cache, grads):
        cfg = self.config
        off = 0
        for comp in cfg.components:
            width = {"saliency": cfg.k_s, "indicator": 1, "navigation": cfg.k_n, "trajectory": 4}[comp]
            d = dx[..., off:off + width]
            off += width
            if comp == "saliency":
                uniq, inv, sc = cache["saliency"]
                grads["_maps"] = (uniq, self._saliency_backward(_scatter_rows(d, inv, len(uniq)), sc, grads))
            elif comp == "navigation":
                uniq, inv, nc = cache["navigation"]
                self._navigation_backward(_scatter_rows(d, inv, len(uniq)), nc, grads)

    def forward(self, ws: WindowSet, forced=None):
        """Decoder outputs ``(B, n, 4)`` and a cache for :meth:`backward`.

        ``forced[j]`` says whether decoder step ``j > 0`` is fed the true
        previous center (teacher forcing) instead of its own previous output;
        the default forces every step.
        """
        cfg, p = self.config, self.params
        if ws.m != cfg.m or ws.n != cfg.n:
            raise ShapeError(f"windows are m={ws.m}, n={ws.n}; model expects m={cfg.m}, n={cfg.n}")
        if forced is None:
            forced = np.ones(cfg.n, dtype=bool)
        x, fcache = self._features(ws)
        B = len(x)
        h0 = np.zeros((B, cfg.hidden), dtype=self.dtype)
        _, h, c, ecache = L.lstm_forward(x, h0, h0.copy(), *self._lstm("enc"))
        target = ws.target.astype(self.dtype)
        Wx, Wh, b = self._lstm("dec")
        out = np.empty((B, cfg.n, 4), dtype=self.dtype)
        y = x[:, -1, -4:]
        dcaches = []
        for j in range(cfg.n):
            inp = y if j == 0 or not forced[j] else target[:, j - 1]
            h, c, cc = L.lstm_cell_forward(inp, h, c, Wx, Wh, b)
            y = inp + h @ p["out.W"] + p["out.b"]
            out[:, j] = y
            dcaches.append((cc, h))
        return out, (fcache, ecache, dcaches, forced)

    def backward(self, dpred, cache):
        fcache, ecache, dcaches, forced = cache
        p = self.params
        grads = {k: np.zeros_like(p[k]) for k in ("out.W", "out.b", "dec.Wx", "dec.Wh", "dec.b")}
        n = len(dcaches)
        dh = np.zeros((dpred.shape[0], p["dec.Wh"].shape[0]), dtype=dpred.dtype)
        dc = np.zeros_like(dh)
        dy_carry = np.zeros_like(dpred[:, 0])
        for j in reversed(range(n)):
            cc, h = dcaches[j]
            dy = dpred[:, j] + dy_carry
            grads["out.W"] += h.T @ dy
            grads["out.b"] += dy.sum(axis=0)
            dinp, dh, dc, gx, gh, gb = L.lstm_cell_backward(dh + dy @ p["out.W"].T, dc, cc)
            grads["dec.Wx"] += gx
            grads["dec.Wh"] += gh
            grads["dec.b"] += gb
            dinp = dinp + dy  # residual path
            # the input of step j came from step j-1's output unless it was forced
            dy_carry = dinp if j == 0 or not forced[j] else np.zeros_like(dinp)
        dx, _, _, grads["enc.Wx"], grads["enc.Wh"], grads["enc.b"] = L.lstm_backward(None, dh, dc, ecache)
        dx[:, -1, -4:] += dy_carry
        self._features_backward(dx, fcache, grads)
        return grads

    def loss_and_grads(self, ws: WindowSet, forced=None):
        pred, cache = self.forward(ws, forced)
        loss, dpred = L.mse_loss(pred, ws.target.astype(self.dtype))
        grads = self.backward(dpred, cache)
        grads.pop("_maps", None)
        return loss, grads

    def rollout(self, ws: WindowSet):
        """Closed-loop decoder outputs ``(B, n, 4)``: each step feeds on its own output."""
        cfg, p = self.config, self.params
        x, _ = self._features(ws)
        h = np.zeros((len(x), cfg.hidden), dtype=self.dtype)
        _, h, c, _ = L.lstm_forward(x, h, h.copy(), *self._lstm("enc"))
        y = x[:, -1, -4:]
        out = np.empty((len(x), cfg.n, 4), dtype=self.dtype)
        Wx, Wh, b = self._lstm("dec")
        for j in range(cfg.n):
            h, c, _ = L.lstm_cell_forward(y, h, c, Wx, Wh, b)
            y = y + h @ p["out.W"] + p["out.b"]
            out[:, j] = y
        return out

    def predict_angles(self, ws: WindowSet):
        """``(B, n)`` arrays of predicted ``phi`` and ``theta``."""
        return decode_angles(self.rollout(ws))

    # -- persistence
    def save(self, path):
        checkpoint.save(path, self.params, self.config.to_dict())

    @classmethod
    def load(cls, path):
        params, cfg = checkpoint.load(path)
        cfg = ModelConfig.from_dict(cfg)
        return cls(cfg, {k: v.astype(cfg.dtype) for k, v in params.items()})


def encode_saliency(smap, model: Seq2SeqModel):
    """Embedding ``f_gts`` of a single saliency map."""
    values = getattr(smap, "values", smap)
    return model.encode_saliency(np.asarray(values)[None])[0][0]


def encode_navigation(tokens, model: Seq2SeqModel):
    """Embedding ``f_nav`` of one token sequence (zero vector when empty)."""
    return model.encode_navigation([tuple(int(t) for t in tokens)])[0][0]


# ---------------------------------------------------------------- training

def _batches(ws: WindowSet, cfg, rng):
    """Shuffled mini-batches built from small blocks of related windows.

    A block is ``block_steps`` consecutive start times of one group (video)
    for ``block_users`` of its users, so it touches only
    ``block_steps + m - 1`` saliency maps; a batch joins ``batch_blocks``
    blocks drawn from anywhere in the data.
    """
    starts = ws.map_ids[:, 0]
    blocks = []
    for g in np.unique(ws.groups):
        rows = np.flatnonzero(ws.groups == g)
        s = starts[rows]
        phase = int(rng.integers(cfg.block_steps))
        t_block = (s - s.min() + phase) // cfg.block_steps
        users = ws.info.get("user")
        u_key = np.unique(users[rows], return_inverse=True)[1] if users is not None else np.zeros(len(rows), int)
        n_users = u_key.max() + 1
        perm = rng.permutation(n_users)
        u_block = perm[u_key] // cfg.block_users
        key = t_block * (n_users + 1) + u_block
        for k in np.unique(key):
            blocks.append(rows[key == k])
    order = rng.permutation(len(blocks))
    return [np.concatenate([blocks[i] for i in order[j:j + cfg.batch_blocks]])
            for j in range(0, len(order), cfg.batch_blocks)]


def train(ws: WindowSet, cfg: ModelConfig, *, progress=None):
    """Fit a model on ``ws``; returns ``(model, per-epoch mean training MSE)``.

    With ``weight_averaging > 0`` the returned weights are an exponential
    moving average of the Adam iterates, which makes closed-loop rollouts far
    less sensitive to where the last mini-batch happened to land.
    ``progress(epoch, loss, averaged_params)`` is called after each epoch.
    """
    if len(ws) == 0:
        raise ValidationError("cannot train on an empty window set")
    model = Seq2SeqModel(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    avg = None
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for rows in _batches(ws, cfg, rng):
            forced = rng.random(cfg.n) < cfg.teacher_forcing
            loss, grads = model.loss_and_grads(ws.subset(rows), forced)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged (non-finite) in epoch {epoch}")
            adam_step(model.params, grads, state)
            if cfg.weight_averaging:
                if avg is None:
                    avg = {k: v.copy() for k, v in model.params.items()}
                for k, v in model.params.items():
                    avg[k] += (1.0 - cfg.weight_averaging) * (v - avg[k])
            total += loss * len(rows)
            count += len(rows)
        history.append(total / count)
        if progress is not None:
            progress(epoch, history[-1], avg)
    if avg is not None:
        model.params = avg
    return model, history


@dataclass(frozen=True)
class PredictionResult:
    coords: list
    latency_ms: float


def predict(model: Seq2SeqModel, window: WindowSet) -> PredictionResult:
    """Predict the next ``n`` centers for a single window, timing the call."""
    if len(window) != 1:
        raise ShapeError(f"predict takes one window, got {len(window)}")
    if window.m != model.config.m:
        raise ShapeError(f"window has {window.m} input steps, model expects {model.config.m}")
    t0 = time.perf_counter()
    phi, theta = model.predict_angles(window)
    latency = (time.perf_counter() - t0) * 1000.0
    coords = [SphericalCoord(float(a), float(b)) for a, b in zip(phi[0], theta[0])]
    return PredictionResult(coords, latency)
