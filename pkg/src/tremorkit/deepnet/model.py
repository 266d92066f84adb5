"""3D Conv-LSTM severity classifier.

Architecture: three Conv3d/MaxPool3d/ReLU blocks (spatial kernels 3, no
spatial padding; temporal kernels 5, padding 2), global average pooling of
the spatial grid into a 32-feature sequence, a 3-layer bidirectional LSTM
with 8 hidden units per direction, temporal attention pooling to a 16-D
embedding, and a linear head over the 4 merged severity classes.

On a 32x32 input, the spatial chain runs 32 -> 30 -> 15 -> 13 -> 6 -> 4 -> 2.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from .. import engine
from ..engine import Tensor

CHECKPOINT_MAGIC = b"TKCP"
CHECKPOINT_SCHEMA = 1


class TooShortClip(ValueError):
    pass


@dataclass(frozen=True)
class ConvBlock:
    c_in: int
    c_out: int
    k_s: int = 3
    k_t: int = 5
    s_s: int = 1
    s_t: int = 1
    p_s: int = 0
    p_t: int = 2
    pool_k_s: int = 2
    pool_k_t: int = 1
    pool_s_s: int = 2
    pool_s_t: int = 1


@dataclass(frozen=True)
class ArchConfig:
    blocks: tuple = (
        ConvBlock(3, 32, pool_k_t=1, pool_s_t=1),
        ConvBlock(32, 32, pool_k_t=2, pool_s_t=2),
        ConvBlock(32, 32, pool_k_t=2, pool_s_t=2),
    )
    lstm_hidden: int = 8
    lstm_layers: int = 3
    bidirectional: bool = True
    lstm_dropout: float = 0.1
    n_classes: int = 4
    in_channels: int = 3
    input_size: int = 32

    def __post_init__(self):
        chain = [self.in_channels] + [b.c_out for b in self.blocks]
        for b, c in zip(self.blocks, chain):
            if b.c_in != c:
                raise ValueError(f"conv channel chain broken at {b}")

    @property
    def lstm_input(self) -> int:
        return self.blocks[-1].c_out

    @property
    def embed_dim(self) -> int:
        return self.lstm_hidden * (2 if self.bidirectional else 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        d["blocks"] = tuple(ConvBlock(**b) for b in d["blocks"])
        return cls(**d)


def _conv_len(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _pool_len(size: int, k: int, s: int) -> int:
    return (size - k) // s + 1


class ConvLSTM:
    """Parameters live in a name -> Tensor map; creation order is the
    checkpoint serialisation order."""

    def __init__(self, arch: ArchConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        self.arch = arch or ArchConfig()
        self.seed = seed
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}
        rng = rngmod.substream(seed, "init")
        a = self.arch

        for i, blk in enumerate(a.blocks, start=1):
            fan_in = blk.c_in * blk.k_t * blk.k_s * blk.k_s
            bound = 1.0 / np.sqrt(fan_in)
            self._add(f"conv{i}.weight",
                      rng.uniform(-bound, bound,
                                  (blk.c_out, blk.c_in, blk.k_t, blk.k_s, blk.k_s)))
            self._add(f"conv{i}.bias", rng.uniform(-bound, bound, (blk.c_out,)))

        h = a.lstm_hidden
        bound = 1.0 / np.sqrt(h)
        directions = ("fwd", "bwd") if a.bidirectional else ("fwd",)
        for layer in range(a.lstm_layers):
            in_dim = a.lstm_input if layer == 0 else h * len(directions)
            for d in directions:
                pre = f"lstm.l{layer}.{d}"
                self._add(f"{pre}.w_ih", rng.uniform(-bound, bound, (in_dim, 4 * h)))
                self._add(f"{pre}.w_hh", rng.uniform(-bound, bound, (h, 4 * h)))
                self._add(f"{pre}.bias", rng.uniform(-bound, bound, (4 * h,)))

        e = a.embed_dim
        bound = 1.0 / np.sqrt(e)
        self._add("attention.query", rng.uniform(-bound, bound, (e,)))
        self._add("head.weight", rng.uniform(-bound, bound, (e, a.n_classes)))
        self._add("head.bias", rng.uniform(-bound, bound, (a.n_classes,)))

    def _add(self, name: str, data: np.ndarray):
        self._params[name] = Tensor(np.asarray(data, dtype=self.dtype),
                                    requires_grad=True, name=name)

    # ---------------------------------------------------------------- state
    def parameters(self) -> list[Tensor]:
        return list(self._params.values())

    def named_parameters(self):
        return list(self._params.items())

    def param(self, name: str) -> Tensor:
        return self._params[name]

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def set_state(self, state: dict[str, np.ndarray]):
        for k, v in self._params.items():
            v.data = np.asarray(state[k], dtype=self.dtype).reshape(v.data.shape)

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    # -------------------------------------------------------------- forward
    def _lstm_direction(self, x_seq: Tensor, prefix: str, reverse_idx=None):
        """Run one LSTM direction over (B,T,in); returns (B,T,h) outputs.

        ``reverse_idx`` is a per-sample time permutation (valid steps
        reversed, padding left in place); it is its own inverse so the same
        gather restores input order afterwards.
        """
        b, t, _ = x_seq.shape
        h = self.arch.lstm_hidden
        rows = np.arange(b)[:, None]
        if reverse_idx is not None:
            x_seq = x_seq[rows, reverse_idx]
        w_ih = self.param(f"{prefix}.w_ih")
        w_hh = self.param(f"{prefix}.w_hh")
        bias = self.param(f"{prefix}.bias")
        h_t = Tensor(np.zeros((b, h), dtype=self.dtype))
        c_t = Tensor(np.zeros((b, h), dtype=self.dtype))
        outs = []
        for step in range(t):
            x_t = x_seq[:, step]
            z = engine.matmul(x_t, w_ih) + engine.matmul(h_t, w_hh) + bias
            i_g = engine.sigmoid(z[:, 0 * h:1 * h])
            f_g = engine.sigmoid(z[:, 1 * h:2 * h])
            g_g = engine.tanh(z[:, 2 * h:3 * h])
            o_g = engine.sigmoid(z[:, 3 * h:4 * h])
            c_t = f_g * c_t + i_g * g_g
            h_t = o_g * engine.tanh(c_t)
            outs.append(h_t)
        out = engine.stack(outs, axis=1)
        if reverse_idx is not None:
            out = out[rows, reverse_idx]
        return out

    def forward(self, clips, lengths=None, training: bool = False, rng=None,
                return_trace: bool = False):
        """Returns (logits (B,k), embedding (B,e), info dict).

        ``lengths`` gives per-sample valid frame counts for padded batches;
        attention ignores padded steps and the backward LSTM starts from
        each sample's true last frame.
        """
        x = engine.as_tensor(clips)
        if x.data.ndim == 4:
            x = engine.reshape(x, (1,) + x.data.shape)
        if x.data.ndim != 5:
            raise engine.ShapeMismatch(f"expected B,C,T,H,W input, got {x.shape}")
        bsz, c_in, t_in, h_in, w_in = x.data.shape
        a = self.arch
        if c_in != a.in_channels:
            raise engine.ShapeMismatch(f"expected {a.in_channels} channels, got {c_in}")
        if t_in < 4:
            raise TooShortClip(f"clip must have at least 4 frames, got {t_in}")
        if lengths is None:
            lengths = np.full(bsz, t_in, dtype=int)
        lengths = np.asarray(lengths, dtype=int)

        trace = [("input", tuple(x.data.shape))]
        for i, blk in enumerate(a.blocks, start=1):
            x = engine.conv3d(x, self.param(f"conv{i}.weight"),
                              self.param(f"conv{i}.bias"),
                              stride=(blk.s_t, blk.s_s), padding=(blk.p_t, blk.p_s))
            trace.append((f"conv{i}", tuple(x.data.shape)))
            lengths = (lengths + 2 * blk.p_t - blk.k_t) // blk.s_t + 1
            x = engine.maxpool3d(x, kernel=(blk.pool_k_t, blk.pool_k_s),
                                 stride=(blk.pool_s_t, blk.pool_s_s))
            trace.append((f"pool{i}", tuple(x.data.shape)))
            lengths = (lengths - blk.pool_k_t) // blk.pool_s_t + 1
            x = engine.relu(x)
            if lengths.min() < 1:
                raise TooShortClip("temporal pooling emptied a clip")

        # parameter-free bridge: average the spatial grid per timestep
        seq = x.mean(axis=(-2, -1))                    # B,C,T'
        seq = engine.transpose(seq, (0, 2, 1))         # B,T',C
        trace.append(("sequence", tuple(seq.data.shape)))
        t_steps = seq.data.shape[1]

        valid = np.arange(t_steps)[None, :] < lengths[:, None]
        rev_idx = np.arange(t_steps)[None, :].repeat(bsz, axis=0)
        for bi in range(bsz):
            n = lengths[bi]
            rev_idx[bi, :n] = n - 1 - np.arange(n)

        directions = ("fwd", "bwd") if a.bidirectional else ("fwd",)
        out = seq
        for layer in range(a.lstm_layers):
            parts = []
            for d in directions:
                parts.append(self._lstm_direction(
                    out, f"lstm.l{layer}.{d}",
                    reverse_idx=rev_idx if d == "bwd" else None))
            out = engine.concat(parts, axis=2) if len(parts) > 1 else parts[0]
            if training and a.lstm_dropout > 0 and layer < a.lstm_layers - 1:
                if rng is None:
                    raise ValueError("training forward needs an rng for dropout")
                keep = (rng.random(out.data.shape) >= a.lstm_dropout).astype(self.dtype)
                out = out * Tensor(keep / (1.0 - a.lstm_dropout))
        trace.append(("lstm", tuple(out.data.shape)))

        scores = engine.matmul(out, self.param("attention.query"))   # B,T'
        mask = np.where(valid, 0.0, -1e9).astype(self.dtype)
        alpha = engine.softmax(scores + Tensor(mask), axis=1)
        embedding = (out * engine.reshape(alpha, (bsz, t_steps, 1))).sum(axis=1)
        trace.append(("embedding", tuple(embedding.data.shape)))

        logits = engine.matmul(embedding, self.param("head.weight")) + self.param("head.bias")
        trace.append(("logits", tuple(logits.data.shape)))

        info = {"attention": alpha.data, "lengths": lengths}
        if return_trace:
            info["trace"] = trace
        return logits, embedding, info


def spatial_chain(arch: ArchConfig) -> list[int]:
    """Spatial sizes through the conv/pool stack, starting at input_size."""
    sizes = [arch.input_size]
    s = arch.input_size
    for blk in arch.blocks:
        s = _conv_len(s, blk.k_s, blk.s_s, blk.p_s)
        sizes.append(s)
        s = _pool_len(s, blk.pool_k_s, blk.pool_s_s)
        sizes.append(s)
    return sizes


def temporal_chain(arch: ArchConfig, t: int) -> list[int]:
    sizes = [t]
    for blk in arch.blocks:
        t = _conv_len(t, blk.k_t, blk.s_t, blk.p_t)
        t = _pool_len(t, blk.pool_k_t, blk.pool_s_t)
        sizes.append(t)
    return sizes


# ------------------------------------------------------------- checkpointing

def save_checkpoint(model: ConvLSTM, path):
    """Binary checkpoint: magic, u32 JSON-header length, JSON header with the
    arch config and parameter order, then the float32 blob."""
    names = [n for n, _ in model.named_parameters()]
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "arch": model.arch.to_dict(),
        "seed": model.seed,
        "params": [{"name": n, "shape": list(model.param(n).data.shape)}
                   for n in names],
    }
    blob = b"".join(np.ascontiguousarray(model.param(n).data, dtype="<f4").tobytes()
                    for n in names)
    payload = json.dumps(header).encode()
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(blob)


def load_checkpoint(path) -> ConvLSTM:
    with Path(path).open("rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        if header.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema "
                             f"{header.get('schema_version')}")
        arch = ArchConfig.from_dict(header["arch"])
        model = ConvLSTM(arch, seed=header.get("seed", 0))
        state = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(count * 4), dtype="<f4", count=count)
            state[spec["name"]] = arr.reshape(shape)
        model.set_state(state)
    return model
