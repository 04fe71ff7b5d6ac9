"""Byte-level decoder-only transformer with a hard context window.

Positions come from a learned table with exactly `context_window` rows, so
the model structurally cannot read a longer sequence; long inputs reach it
only through segment fine-tuning or prompt truncation. Pre-norm blocks,
GELU MLPs, bias-free projections, untied output head.

Checkpoints are a small versioned binary format (magic "LIFTCKPT"):
a JSON key-value header with the ModelConfig, then named parameter blocks
as little-endian float32. Save/load round-trips are byte-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import numcore as nc

CHECKPOINT_MAGIC = b"LIFTCKPT"
CHECKPOINT_VERSION = 1

_INIT_STD = 0.02       # token embeddings and projections
_POS_INIT_STD = 0.01   # positional rows start small: content should dominate


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    context_window: int = 64
    n_layers: int = 2
    n_heads: int = 2
    embed_dim: int = 64
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if self.context_window < 2:
            raise ValueError("context_window must be at least 2")
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("n_layers and n_heads must be positive")
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


def param_count(config: ModelConfig) -> int:
    """Closed form: 2*V*d + W*d + n_layers*(12*d^2 + 4*d) + 2*d."""
    d = config.embed_dim
    return (2 * config.vocab_size * d + config.context_window * d
            + config.n_layers * (12 * d * d + 4 * d) + 2 * d)


def _init_params(config: ModelConfig) -> dict[str, nc.Tensor]:
    rng = np.random.default_rng(config.seed)
    dt = np.dtype(config.dtype)
    d = config.embed_dim

    def w(shape, std):
        return nc.Tensor(rng.normal(0.0, std, shape).astype(dt), requires_grad=True)

    def g1():
        return nc.Tensor(np.ones(d, dtype=dt), requires_grad=True)

    def b0():
        return nc.Tensor(np.zeros(d, dtype=dt), requires_grad=True)

    params: dict[str, nc.Tensor] = {
        "tok_emb": w((config.vocab_size, d), _INIT_STD),
        "pos_emb": w((config.context_window, d), _POS_INIT_STD),
    }
    for i in range(config.n_layers):
        params[f"layer{i}.ln1.gain"] = g1()
        params[f"layer{i}.ln1.bias"] = b0()
        params[f"layer{i}.attn.wq"] = w((d, d), _INIT_STD)
        params[f"layer{i}.attn.wk"] = w((d, d), _INIT_STD)
        params[f"layer{i}.attn.wv"] = w((d, d), _INIT_STD)
        params[f"layer{i}.attn.wo"] = w((d, d), _INIT_STD)
        params[f"layer{i}.ln2.gain"] = g1()
        params[f"layer{i}.ln2.bias"] = b0()
        params[f"layer{i}.mlp.w1"] = w((d, 4 * d), _INIT_STD)
        params[f"layer{i}.mlp.w2"] = w((4 * d, d), _INIT_STD)
    params["lnf.gain"] = g1()
    params["lnf.bias"] = b0()
    params["out_proj"] = w((d, config.vocab_size), _INIT_STD)
    return params


class Model:
    """Config plus named parameter tensors; all math goes through numcore."""

    def __init__(self, config: ModelConfig, params: dict[str, nc.Tensor] | None = None):
        self.config = config
        self.params = _init_params(config) if params is None else params

    def copy(self) -> "Model":
        """Deep parameter copy sharing the (frozen) config."""
        params = {k: nc.Tensor(t.data.copy(), requires_grad=True)
                  for k, t in self.params.items()}
        return Model(self.config, params)

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def __repr__(self) -> str:
        c = self.config
        return (f"Model(V={c.vocab_size}, W={c.context_window}, layers={c.n_layers}, "
                f"heads={c.n_heads}, d={c.embed_dim}, params={self.param_count()})")


# --- tokenizer ----------------------------------------------------------------


def encode(text: str | bytes) -> list[int]:
    """Byte-level tokenization: one token per byte (UTF-8 for str input)."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return list(text)


def decode(ids) -> bytes:
    """Exact inverse of encode for byte vocabularies."""
    out = bytearray()
    for i in ids:
        i = int(i)
        if not 0 <= i <= 255:
            raise ValueError(f"token id {i} is not a byte")
        out.append(i)
    return bytes(out)


def decode_text(ids) -> str:
    return decode(ids).decode("utf-8", errors="replace")


# --- forward / losses / generation --------------------------------------------


def _forward(model: Model, ids: np.ndarray) -> nc.Tensor:
    cfg = model.config
    T = len(ids)
    if not 1 <= T <= cfg.context_window:
        raise ValueError(f"sequence length {T} outside [1, {cfg.context_window}]")
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")
    p = model.params
    x = nc.add(nc.embedding(p["tok_emb"], ids),
               nc.embedding(p["pos_emb"], np.arange(T)))
    for i in range(cfg.n_layers):
        h = nc.layer_norm(x, p[f"layer{i}.ln1.gain"], p[f"layer{i}.ln1.bias"])
        q = nc.matmul(h, p[f"layer{i}.attn.wq"])
        k = nc.matmul(h, p[f"layer{i}.attn.wk"])
        v = nc.matmul(h, p[f"layer{i}.attn.wv"])
        att = nc.causal_attention(q, k, v, cfg.n_heads)
        x = nc.add(x, nc.matmul(att, p[f"layer{i}.attn.wo"]))
        h2 = nc.layer_norm(x, p[f"layer{i}.ln2.gain"], p[f"layer{i}.ln2.bias"])
        mlp = nc.matmul(nc.gelu(nc.matmul(h2, p[f"layer{i}.mlp.w1"])),
                        p[f"layer{i}.mlp.w2"])
        x = nc.add(x, mlp)
    x = nc.layer_norm(x, p["lnf.gain"], p["lnf.bias"])
    return nc.matmul(x, p["out_proj"])


def forward_logits(model: Model, tokens) -> np.ndarray:
    """Next-token logits, one row per input position. No graph is built."""
    with nc.no_grad():
        return _forward(model, np.asarray(list(tokens))).data


def lm_loss(model: Model, tokens) -> nc.Tensor:
    """Mean NLL of tokens[1:] given their prefixes (per scored token)."""
    ids = np.asarray(list(tokens))
    n = len(ids)
    if not 2 <= n <= model.config.context_window:
        raise ValueError(f"lm_loss needs 2..{model.config.context_window} tokens, got {n}")
    logits = _forward(model, ids[:-1])
    return nc.cross_entropy(logits, ids[1:])


def qa_loss(model: Model, question, answer) -> nc.Tensor:
    """Mean NLL over answer tokens given question ++ preceding answer tokens.

    Question positions are masked out of the mean; only answer tokens are
    scored, so two equal-length questions always score the same positions.
    """
    q = list(question)
    a = list(answer)
    if not q:
        raise ValueError("qa_loss needs a non-empty question")
    if not a:
        raise ValueError("qa_loss needs a non-empty answer")
    ids = np.asarray(q + a)
    n = len(ids)
    if n > model.config.context_window:
        raise ValueError(f"question+answer length {n} exceeds context window "
                         f"{model.config.context_window}")
    logits = _forward(model, ids[:-1])
    # row i predicts ids[i+1]; answer tokens sit at ids[len(q):]
    mask = np.zeros(n - 1, dtype=bool)
    mask[len(q) - 1:] = True
    return nc.cross_entropy(logits, ids[1:], row_mask=mask)


def generate(model: Model, prompt, max_new: int, stop_token: int | None = None) -> list[int]:
    """Greedy decoding; ties break toward the lowest token id.

    If the running context outgrows the window, only the last W-1 tokens
    are fed back. Returns the continuation (prompt excluded), including the
    stop token if one was produced.
    """
    ctx = list(prompt)
    if not ctx:
        raise ValueError("generate needs a non-empty prompt")
    W = model.config.context_window
    if len(ctx) > W:
        raise ValueError(f"prompt length {len(ctx)} exceeds context window {W}")
    out: list[int] = []
    for _ in range(max_new):
        window = ctx if len(ctx) <= W else ctx[-(W - 1):]
        logits = forward_logits(model, window)
        nxt = int(np.argmax(logits[-1]))
        ctx.append(nxt)
        out.append(nxt)
        if stop_token is not None and nxt == stop_token:
            break
    return out


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: Model, path, extra: dict[str, str] | None = None) -> None:
    """Write the versioned binary checkpoint (float32 parameter blocks)."""
    if model.config.dtype != "float32":
        raise ValueError("checkpoints store float32 parameters only")
    header = {"config": asdict(model.config), "extra": dict(extra or {})}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        f.write(hb)
        f.write(struct.pack("<I", len(model.params)))
        for name, t in model.params.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            arr = t.data
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4", copy=False).tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        return json.loads(f.read(hlen).decode("utf-8"))


def load_checkpoint(path) -> Model:
    with open(path, "rb") as f:
        blob = f.read()
    off = len(CHECKPOINT_MAGIC)
    if blob[:off] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {blob[:off]!r})")
    version, hlen = struct.unpack_from("<II", blob, off)
    off += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    config = ModelConfig(**header["config"])
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    params: dict[str, nc.Tensor] = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        params[name] = nc.Tensor(arr.astype(np.float32), requires_grad=True)
    if off != len(blob):
        raise ValueError("trailing bytes after parameter blocks")
    return Model(config, params)
