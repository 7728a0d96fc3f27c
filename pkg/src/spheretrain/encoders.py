"""Feature extractors that map raw inputs to unit-norm embeddings.

Two encoders share one parameter protocol: a two-layer MLP for loss-level
experiments on vector inputs, and a small vision transformer for images. The
transformer has no class token; after the final layer every patch token is
concatenated and fed through an MLP head, and the result is normalized onto
the unit sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

INIT_STD = 0.01


@dataclass(frozen=True)
class ViTConfig:
    image_width: int
    patch_stride: int
    token_dim: int
    layers: int
    heads: int
    embed_dim: int
    channels: int = 1
    ffn_hidden: int | None = None
    head_hidden: int | None = None

    def __post_init__(self):
        if self.image_width % self.patch_stride != 0:
            raise ConfigError(
                f"image width {self.image_width} not divisible by stride {self.patch_stride}"
            )
        if self.token_dim % self.heads != 0:
            raise ConfigError(
                f"token dim {self.token_dim} not divisible by {self.heads} heads"
            )
        if min(self.layers, self.embed_dim, self.channels) < 1:
            raise ConfigError("layers, embed_dim and channels must be positive")

    @property
    def grid(self) -> int:
        return self.image_width // self.patch_stride

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_len(self) -> int:
        return self.patch_stride * self.patch_stride * self.channels

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.heads

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 4 * self.token_dim

    @property
    def head_width(self) -> int:
        return self.head_hidden if self.head_hidden is not None else self.embed_dim

    def to_mapping(self) -> dict:
        return {
            "image_width": self.image_width,
            "patch_stride": self.patch_stride,
            "token_dim": self.token_dim,
            "layers": self.layers,
            "heads": self.heads,
            "embed_dim": self.embed_dim,
            "channels": self.channels,
            "ffn_hidden": self.ffn_width,
            "head_hidden": self.head_width,
        }


def patchify(image: np.ndarray, config: ViTConfig) -> np.ndarray:
    """Cut a W x W x C image into non-overlapping patches, one flattened
    patch per row, patches ordered row-major over the grid."""
    image = np.asarray(image, dtype=np.float64)
    expected = (config.image_width, config.image_width, config.channels)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} does not match config {expected}")
    s, g = config.patch_stride, config.grid
    rows = image.reshape(g, s, g, s, config.channels)
    rows = rows.transpose(0, 2, 1, 3, 4)
    return rows.reshape(config.num_patches, config.patch_len)


class _ParamStore:
    """Ordered named parameters with kind-aware initialization."""

    def __init__(self):
        self._specs: list[tuple[str, tuple[int, ...], str]] = []
        self._tensors: dict[str, Tensor] = {}

    def declare(self, name: str, shape: tuple[int, ...], kind: str) -> None:
        self._specs.append((name, shape, kind))
        self._tensors[name] = Tensor(np.zeros(shape), requires_grad=True)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def init(self, rng: np.random.Generator, weight_std: float = INIT_STD) -> None:
        """Weights ~ N(0, weight_std), biases zero, normalization gains one;
        drawn in declaration order so the rng stream is reproducible. The
        default matches the training recipe; gradient checks pass a larger
        std so the unit normalization is well conditioned at the probe point."""
        for name, shape, kind in self._specs:
            if kind == "weight":
                data = rng.normal(0.0, weight_std, size=shape)
            elif kind == "bias":
                data = np.zeros(shape)
            elif kind == "gain":
                data = np.ones(shape)
            else:
                raise ConfigError(f"unknown parameter kind {kind!r}")
            self._tensors[name] = Tensor(data, requires_grad=True)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(name, self._tensors[name]) for name, _, _ in self._specs]

    def num_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape, _ in self._specs)

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for name, shape, _ in self._specs:
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(
                    f"parameter {name!r} has shape {arr.shape}, expected {shape}"
                )
            self._tensors[name] = Tensor(arr.copy(), requires_grad=True)


class MLPEncoder:
    """Two affine layers with a smooth nonlinearity between, then unit-normalize."""

    def __init__(self, input_dim: int, hidden_dim: int, embed_dim: int):
        if min(input_dim, hidden_dim, embed_dim) < 2:
            raise ConfigError("all MLP dimensions must be at least 2")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self._store = _ParamStore()
        self._store.declare("fc1.w", (input_dim, hidden_dim), "weight")
        self._store.declare("fc1.b", (hidden_dim,), "bias")
        self._store.declare("fc2.w", (hidden_dim, embed_dim), "weight")
        self._store.declare("fc2.b", (embed_dim,), "bias")

    def init(self, rng: np.random.Generator, weight_std: float = INIT_STD) -> None:
        self._store.init(rng, weight_std)

    def params(self) -> list[tuple[str, Tensor]]:
        return self._store.items()

    def num_params(self) -> int:
        return self._store.num_params()

    def forward(self, inputs: np.ndarray) -> Tensor:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected (batch, {self.input_dim}) inputs, got {x.shape}")
        p = self._store
        h = T.add_rowvec(T.matmul(Tensor(x), p["fc1.w"]), p["fc1.b"])
        h = T.gelu(h)
        out = T.add_rowvec(T.matmul(h, p["fc2.w"]), p["fc2.b"])
        return T.l2_normalize_rows(out)

    def describe(self) -> dict:
        return {
            "kind": "mlp",
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "embed_dim": self.embed_dim,
        }

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        self._store.restore(arrays)


class ViTEncoder:
    """Patch embedding, pre-norm transformer layers, all-token MLP head.

    Layer l computes, with LN inside the residual branch:

        u = tokens + attention(LN(tokens))
        tokens = u + ffn(LN(u))

    The head flattens the final token sequence row-major and applies
    fc -> layer norm -> gelu -> fc before the unit normalization. Attention
    scores are scaled by 1/sqrt(head_dim).
    """

    def __init__(self, config: ViTConfig):
        self.config = config
        self.embed_dim = config.embed_dim
        store = _ParamStore()
        store.declare("patch_embed", (config.patch_len, config.token_dim), "weight")
        store.declare("pos_embed", (config.num_patches, config.token_dim), "weight")
        d, dh = config.token_dim, config.head_dim
        for i in range(config.layers):
            pre = f"layer{i}."
            store.declare(pre + "attn_ln.gain", (d,), "gain")
            store.declare(pre + "attn_ln.bias", (d,), "bias")
            for h in range(config.heads):
                hp = pre + f"head{h}."
                for proj in ("q", "k", "v"):
                    store.declare(hp + f"w{proj}", (d, dh), "weight")
                    store.declare(hp + f"b{proj}", (dh,), "bias")
            store.declare(pre + "attn_out.w", (d, d), "weight")
            store.declare(pre + "attn_out.b", (d,), "bias")
            store.declare(pre + "ffn_ln.gain", (d,), "gain")
            store.declare(pre + "ffn_ln.bias", (d,), "bias")
            store.declare(pre + "ffn1.w", (d, config.ffn_width), "weight")
            store.declare(pre + "ffn1.b", (config.ffn_width,), "bias")
            store.declare(pre + "ffn2.w", (config.ffn_width, d), "weight")
            store.declare(pre + "ffn2.b", (d,), "bias")
        flat = config.num_patches * d
        store.declare("head_fc1.w", (flat, config.head_width), "weight")
        store.declare("head_fc1.b", (config.head_width,), "bias")
        store.declare("head_ln.gain", (config.head_width,), "gain")
        store.declare("head_ln.bias", (config.head_width,), "bias")
        store.declare("head_fc2.w", (config.head_width, config.embed_dim), "weight")
        store.declare("head_fc2.b", (config.embed_dim,), "bias")
        self._store = store

    def init(self, rng: np.random.Generator, weight_std: float = INIT_STD) -> None:
        self._store.init(rng, weight_std)

    def params(self) -> list[tuple[str, Tensor]]:
        return self._store.items()

    def num_params(self) -> int:
        return self._store.num_params()

    def attention(self, tokens: Tensor, layer: int) -> Tensor:
        """Multi-head self-attention over one token sequence (N x D)."""
        p = self._store
        pre = f"layer{layer}."
        inv = 1.0 / math.sqrt(self.config.head_dim)
        mixed = []
        for h in range(self.config.heads):
            hp = pre + f"head{h}."
            q = T.add_rowvec(T.matmul(tokens, p[hp + "wq"]), p[hp + "bq"])
            k = T.add_rowvec(T.matmul(tokens, p[hp + "wk"]), p[hp + "bk"])
            v = T.add_rowvec(T.matmul(tokens, p[hp + "wv"]), p[hp + "bv"])
            scores = T.scale(T.matmul(q, T.transpose(k)), inv)
            mixed.append(T.matmul(T.row_softmax(scores), v))
        joined = mixed[0] if len(mixed) == 1 else T.concat_cols(mixed)
        return T.add_rowvec(T.matmul(joined, p[pre + "attn_out.w"]), p[pre + "attn_out.b"])

    def forward_tokens(self, image: np.ndarray) -> Tensor:
        """Token sequence after the last transformer layer, before the head."""
        p = self._store
        patches = Tensor(patchify(image, self.config))
        z = T.add(T.matmul(patches, p["patch_embed"]), p["pos_embed"])
        for i in range(self.config.layers):
            pre = f"layer{i}."
            h = T.layer_norm(z, p[pre + "attn_ln.gain"], p[pre + "attn_ln.bias"])
            z = T.add(self.attention(h, i), z)
            h = T.layer_norm(z, p[pre + "ffn_ln.gain"], p[pre + "ffn_ln.bias"])
            f = T.add_rowvec(T.matmul(h, p[pre + "ffn1.w"]), p[pre + "ffn1.b"])
            f = T.gelu(f)
            f = T.add_rowvec(T.matmul(f, p[pre + "ffn2.w"]), p[pre + "ffn2.b"])
            z = T.add(f, z)
        return z

    def _forward_one(self, image: np.ndarray) -> Tensor:
        p = self._store
        z = self.forward_tokens(image)
        flat = T.reshape(z, (1, self.config.num_patches * self.config.token_dim))
        h = T.add_rowvec(T.matmul(flat, p["head_fc1.w"]), p["head_fc1.b"])
        h = T.layer_norm(h, p["head_ln.gain"], p["head_ln.bias"])
        h = T.gelu(h)
        out = T.add_rowvec(T.matmul(h, p["head_fc2.w"]), p["head_fc2.b"])
        return T.l2_normalize_rows(out)

    def forward(self, inputs: np.ndarray) -> Tensor:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim != 4:
            raise ShapeError(f"expected (batch, W, W, C) images, got shape {x.shape}")
        feats = [self._forward_one(img) for img in x]
        return feats[0] if len(feats) == 1 else T.concat_rows(feats)

    def describe(self) -> dict:
        return {"kind": "vit", **self.config.to_mapping()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        self._store.restore(arrays)


def build_encoder(arch: dict):
    """Reconstruct an encoder from its ``describe()`` mapping."""
    kind = arch.get("kind")
    if kind == "mlp":
        return MLPEncoder(
            input_dim=int(arch["input_dim"]),
            hidden_dim=int(arch["hidden_dim"]),
            embed_dim=int(arch["embed_dim"]),
        )
    if kind == "vit":
        return ViTEncoder(
            ViTConfig(
                image_width=int(arch["image_width"]),
                patch_stride=int(arch["patch_stride"]),
                token_dim=int(arch["token_dim"]),
                layers=int(arch["layers"]),
                heads=int(arch["heads"]),
                embed_dim=int(arch["embed_dim"]),
                channels=int(arch["channels"]),
                ffn_hidden=int(arch["ffn_hidden"]),
                head_hidden=int(arch["head_hidden"]),
            )
        )
    raise ConfigError(f"unknown encoder kind {kind!r}")
