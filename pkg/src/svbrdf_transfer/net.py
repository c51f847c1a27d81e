"""Compact U-shaped SVBRDF predictor with a global feature track."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from .autodiff import Graph
from .maps import ALPHA_MIN, ImageBuffer, ParameterMaps

OUT_CHANNELS = 9  # normal xy, diffuse rgb, roughness, specular rgb


@dataclass(frozen=True)
class NetConfig:
    size: int = 64
    depth: int = 4
    base: int = 8
    global_width: int = 16

    def __post_init__(self):
        if min(self.size, self.depth, self.base, self.global_width) < 1:
            raise ValueError("all NetConfig fields must be >= 1")
        if self.size & (self.size - 1):
            raise ValueError(f"input size must be a power of two, got {self.size}")
        if self.size % (2 ** self.depth):
            raise ValueError(f"input size {self.size} is not divisible by 2**depth = {2 ** self.depth}")

    def channels(self, level: int) -> int:
        return self.base * 2 ** min(level, 3)

    @property
    def bottleneck_size(self) -> int:
        return self.size // 2 ** self.depth

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Every parameter tensor name and shape, in graph order."""
        shapes = {}

        def conv(name, cin, cout, k=3):
            shapes[f"{name}.w"] = (cout, cin, k, k)
            shapes[f"{name}.b"] = (cout,)

        ch = self.channels
        conv("enc0", 3, ch(0))
        for i in range(1, self.depth + 1):
            conv(f"enc{i}", ch(i - 1), ch(i))
        cb = ch(self.depth)
        shapes["global.fc1.w"] = (self.global_width, cb)
        shapes["global.fc1.b"] = (self.global_width,)
        shapes["global.fc2.w"] = (cb, self.global_width)
        shapes["global.fc2.b"] = (cb,)
        for i in reversed(range(self.depth)):
            conv(f"dec{i}.up", ch(i + 1), ch(i))
            conv(f"dec{i}.fuse", 2 * ch(i) + (3 if i == 0 else 0), ch(i))
        conv("head", ch(0), OUT_CHANNELS)
        return shapes


@dataclass
class NetworkParams:
    config: NetConfig
    tensors: dict[str, np.ndarray]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def copy(self) -> NetworkParams:
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.seed, dict(self.meta))

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_network(cfg: NetConfig, seed: int) -> NetworkParams:
    """He-style uniform initialization scaled by fan-in; biases start at 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return NetworkParams(cfg, tensors, seed)


def build_graph(cfg: NetConfig, tensors: dict[str, np.ndarray]) -> tuple[Graph, int]:
    """Build the predictor graph; returns it with the logits node id."""
    g = Graph(np.float32)
    p = {name: g.param(name, tensors[name]) for name in cfg.param_shapes()}

    def conv(name, x, stride=1):
        return g.op("conv2d", x, p[f"{name}.w"], p[f"{name}.b"], name=name, stride=stride)

    def lrelu(x):
        return g.op("leaky_relu", x, slope=0.2)

    x = g.input("image", (None, 3, cfg.size, cfg.size))
    skips = [lrelu(conv("enc0", x))]
    for i in range(1, cfg.depth + 1):
        pre_norm = conv(f"enc{i}", skips[-1], stride=2)
        skips.append(lrelu(g.op("instance_norm", pre_norm)))
    bottom = skips[-1]
    # pool before normalization so the global track still sees absolute brightness
    pooled = g.op("global_avg_pool", pre_norm)
    gf = lrelu(g.op("fully_connected", pooled, p["global.fc1.w"], p["global.fc1.b"], name="global.fc1"))
    gb = g.op("fully_connected", gf, p["global.fc2.w"], p["global.fc2.b"], name="global.fc2")
    gb = g.op("reshape", gb, shape=(-1, cfg.channels(cfg.depth), 1, 1))
    d = g.op("add", bottom, gb)
    for i in reversed(range(cfg.depth)):
        u = lrelu(conv(f"dec{i}.up", g.op("upsample2", d)))
        parts = (u, skips[i], x) if i == 0 else (u, skips[i])
        fused = conv(f"dec{i}.fuse", g.op("concat", *parts))
        d = lrelu(g.op("instance_norm", fused) if i > 0 else fused)
    logits = conv("head", d)
    return g, logits


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_heads(logits: np.ndarray) -> tuple[dict[str, np.ndarray], tuple]:
    """Turn raw ``(N, 9, H, W)`` logits into valid maps (NHWC, float64)."""
    a = logits.astype(np.float64).transpose(0, 2, 3, 1)
    x, y = np.tanh(a[..., 0]), np.tanh(a[..., 1])
    s = 1.0 - x * x - y * y
    inside = s > 1e-6
    z = np.sqrt(np.where(inside, s, 1e-6))
    m = np.stack([x, y, z], axis=-1)
    length = np.linalg.norm(m, axis=-1, keepdims=True)
    n = m / length
    sd = _sigmoid(a[..., 2:5])
    sr = _sigmoid(a[..., 5])
    ss = _sigmoid(a[..., 6:9])
    maps = {
        "normal": n,
        "diffuse": sd,
        "roughness": ALPHA_MIN + (1.0 - ALPHA_MIN) * sr,
        "specular": ss,
    }
    return maps, (x, y, z, inside, n, length, sd, sr, ss)


def decode_backward(cache: tuple, grads: dict[str, np.ndarray]) -> np.ndarray:
    """Gradient of the decoded maps w.r.t. the logits, ``(N, 9, H, W)``."""
    x, y, z, inside, n, length, sd, sr, ss = cache
    out = np.zeros(x.shape + (OUT_CHANNELS,))
    gn = grads.get("normal")
    if gn is not None:
        gm = (gn - n * np.sum(n * gn, axis=-1, keepdims=True)) / length
        gz = np.where(inside, gm[..., 2] / z, 0.0)
        gx = gm[..., 0] - gz * x
        gy = gm[..., 1] - gz * y
        out[..., 0] = gx * (1.0 - x * x)
        out[..., 1] = gy * (1.0 - y * y)
    if "diffuse" in grads:
        out[..., 2:5] = grads["diffuse"] * sd * (1.0 - sd)
    if "roughness" in grads:
        out[..., 5] = grads["roughness"] * (1.0 - ALPHA_MIN) * sr * (1.0 - sr)
    if "specular" in grads:
        out[..., 6:9] = grads["specular"] * ss * (1.0 - ss)
    return out.transpose(0, 3, 1, 2)


class Predictor:
    """Owns a graph over a set of parameters.

    Not safe for concurrent use: forward and backward share cached state.
    """

    def __init__(self, params: NetworkParams):
        self.params = params
        self.config = params.config
        self.graph, self.logits_node = build_graph(self.config, params.tensors)
        # train and predict in place on the same arrays
        params.tensors = self.graph.params
        self.peak_activation_bytes = 0

    def forward(self, images: np.ndarray) -> tuple[dict[str, np.ndarray], tuple]:
        """Run a batch of NHWC images in [0, 1]; returns decoded NHWC maps."""
        x = np.ascontiguousarray(np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2))
        logits = self.graph.forward({"image": x}, outputs=[self.logits_node])[self.logits_node]
        self.peak_activation_bytes = max(self.peak_activation_bytes, self.graph.activation_bytes())
        return decode_heads(logits)

    def backward(self, cache: tuple, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        seed = decode_backward(cache, grads)
        return self.graph.backward(self.logits_node, seed=seed)

    def predict(self, img) -> ParameterMaps:
        data = img.data if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
        s = self.config.size
        if data.shape != (s, s, 3):
            raise ValueError(f"predictor expects a {s}x{s}x3 tile, got {data.shape}")
        maps, _ = self.forward(data[None])
        self.graph.release()
        return ParameterMaps(**{k: v[0] for k, v in maps.items()})


def predict_tile(p: NetworkParams | Predictor, img) -> ParameterMaps:
    predictor = p if isinstance(p, Predictor) else Predictor(p)
    return predictor.predict(img)


def save_network(p: NetworkParams, path, **meta):
    info = {"net": asdict(p.config), "seed": p.seed, **p.meta, **meta}
    return checkpoint.save(path, p.tensors, info)


def load_network(path, cfg: NetConfig | None = None) -> NetworkParams:
    """Load a checkpoint, checking tensor shapes against ``cfg``.

    When ``cfg`` is omitted the configuration stored in the file is used.
    """
    tensors, meta = checkpoint.load(path)
    stored = NetConfig(**meta["net"]) if "net" in meta else None
    cfg = cfg or stored
    if cfg is None:
        raise checkpoint.CheckpointError("checkpoint carries no network configuration")
    expected = cfg.param_shapes()
    for name, shape in expected.items():
        if name not in tensors:
            raise checkpoint.CheckpointError(f"shape mismatch: tensor {name!r} missing from checkpoint")
        if tensors[name].shape != shape:
            raise checkpoint.CheckpointError(
                f"shape mismatch: tensor {name!r} has shape {tensors[name].shape}, config expects {shape}")
    extra = set(tensors) - set(expected)
    if extra:
        raise checkpoint.CheckpointError(f"shape mismatch: unexpected tensor {sorted(extra)[0]!r}")
    info = {k: v for k, v in meta.items() if k not in ("net", "seed")}
    return NetworkParams(cfg, {k: tensors[k] for k in expected}, meta.get("seed"), info)
