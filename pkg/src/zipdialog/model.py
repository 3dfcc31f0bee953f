"""Text encoder with additive speaker-turn embeddings and a vector-field
estimator carrying parallel single-channel and two-channel projections."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np

from . import numerics as nx
from .features import upsample_index
from .numerics import Tensor

Head = Literal["mono", "stereo"]
CKPT_MAGIC = b"ZDCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    text_dim: int = 32          # F
    feat_dim: int = 16          # D
    hidden: int = 64            # H
    text_layers: int = 2        # K
    trunk_layers: int = 3       # K'
    heads: int = 2
    ff_mult: int = 2
    time_features: int = 16
    speaker_embeddings: bool = True
    stereo_init_scale: float = 0.5  # 1.0 gives plain duplication

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class Model:
    """Parameter container.  ``params`` maps dotted names to leaf tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    @property
    def has_stereo(self) -> bool:
        return "vf.stereo.in.w0" in self.params

    def parameters(self, prefix: str = "") -> list[Tensor]:
        return [p for n, p in self.params.items() if n.startswith(prefix)]

    def text_parameters(self) -> list[Tensor]:
        return self.parameters("text.") + self.parameters("spk.")

    def copy(self) -> "Model":
        return Model(self.config, {n: nx.parameter(p.data.copy(), n) for n, p in self.params.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.params.items()}

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())


# -- initialisation ---------------------------------------------------------
def _dense(rng, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return gain * rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)


def _block_params(rng, prefix: str, width: int, ff_mult: int, depth: int) -> dict[str, np.ndarray]:
    res = 1.0 / math.sqrt(2 * depth)
    p = {}
    for name in ("q", "k", "v"):
        p[f"{prefix}attn.w{name}"] = _dense(rng, width, width)
        p[f"{prefix}attn.b{name}"] = np.zeros(width)
    p[f"{prefix}attn.wo"] = _dense(rng, width, width, res)
    p[f"{prefix}attn.bo"] = np.zeros(width)
    p[f"{prefix}ff.w1"] = _dense(rng, width, ff_mult * width)
    p[f"{prefix}ff.b1"] = np.zeros(ff_mult * width)
    p[f"{prefix}ff.w2"] = _dense(rng, ff_mult * width, width, res)
    p[f"{prefix}ff.b2"] = np.zeros(width)
    return p


def _head_params(rng, cfg: ModelConfig, head: Head) -> dict[str, np.ndarray]:
    D, F, H = cfg.feat_dim, cfg.text_dim, cfg.hidden
    channels = 1 if head == "mono" else 2
    p = {}
    for c in range(channels):
        p[f"vf.{head}.zproj.w{c}"] = _dense(rng, F, D)
        p[f"vf.{head}.zproj.b{c}"] = np.zeros(D)
        p[f"vf.{head}.in.w{c}"] = rng.standard_normal((3 * D, H)) / math.sqrt(3 * D * channels)
        p[f"vf.{head}.out.w{c}"] = _dense(rng, H, D)
        p[f"vf.{head}.out.b{c}"] = np.zeros(D)
    p[f"vf.{head}.in.b"] = np.zeros(H)
    return p


def init_model(config: ModelConfig | None = None, seed: int | np.random.Generator = 0) -> Model:
    """Fresh single-channel model."""
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    F, H = cfg.text_dim, cfg.hidden
    p: dict[str, np.ndarray] = {"text.embed": rng.standard_normal((cfg.vocab_size, F)),
                                "text.pos": np.eye(F)}
    for k in range(cfg.text_layers):
        p.update(_block_params(rng, f"text.blocks.{k}.", F, cfg.ff_mult, cfg.text_layers))
    p["spk.table"] = rng.standard_normal((2, F))
    p["null.z"] = np.zeros(F)
    p["null.cond"] = np.zeros(cfg.feat_dim)
    p.update(_head_params(rng, cfg, "mono"))
    for k in range(cfg.trunk_layers):
        p[f"vf.blocks.{k}.time.w"] = _dense(rng, cfg.time_features, H)
        p[f"vf.blocks.{k}.time.b"] = np.zeros(H)
        p.update(_block_params(rng, f"vf.blocks.{k}.", H, cfg.ff_mult, cfg.trunk_layers))
    return Model(cfg, {n: nx.parameter(v, n) for n, v in p.items()})


def init_stereo_from_mono(mono: Model, scale: float | None = None,
                          random_projections: bool = False, seed=0) -> Model:
    """Add two-channel projections next to the single-channel ones.

    Trunk, text encoder, speaker and null embeddings are copied verbatim.
    The stereo input projection gets the mono weights for each channel block
    times ``scale`` (default from the config, 1/2), the condition projection
    and output projection one unscaled copy per channel.  With
    ``random_projections`` the stereo layers are freshly initialised instead.
    """
    model = mono.copy()
    if random_projections:
        fresh = _head_params(np.random.default_rng(seed), mono.config, "stereo")
        model.params.update({n: nx.parameter(v, n) for n, v in fresh.items()})
        return model
    s = mono.config.stereo_init_scale if scale is None else scale
    m = mono.params
    new = {"vf.stereo.in.b": m["vf.mono.in.b"].data.copy()}
    for c in range(2):
        new[f"vf.stereo.zproj.w{c}"] = m["vf.mono.zproj.w0"].data.copy()
        new[f"vf.stereo.zproj.b{c}"] = m["vf.mono.zproj.b0"].data.copy()
        new[f"vf.stereo.in.w{c}"] = s * m["vf.mono.in.w0"].data
        new[f"vf.stereo.out.w{c}"] = m["vf.mono.out.w0"].data.copy()
        new[f"vf.stereo.out.b{c}"] = m["vf.mono.out.b0"].data.copy()
    model.params.update({n: nx.parameter(v, n) for n, v in new.items()})
    return model


# -- layers -------------------------------------------------------------------
def sinusoid(positions: np.ndarray, dim: int, max_period: float = 100.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / max(half - 1, 1))
    ang = np.asarray(positions, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def timestep_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Fixed sinusoidal features of ``t`` in [0, 1]; the lowest frequency is
    one radian per unit time so the map is injective on [0, 1]."""
    half = dim // 2
    freqs = 2.0 ** np.arange(half)
    ang = np.asarray(t, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def _attention(p, prefix: str, x: Tensor, heads: int) -> Tensor:
    B, T, W = x.shape
    dh = W // heads

    def split(name):
        y = nx.affine(x, p[f"{prefix}w{name}"], p[f"{prefix}b{name}"])
        return nx.transpose(nx.reshape(y, (B, T, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = nx.mul(nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    o = nx.matmul(nx.softmax(scores, axis=-1), v)
    o = nx.reshape(nx.transpose(o, (0, 2, 1, 3)), (B, T, W))
    return nx.affine(o, p[f"{prefix}wo"], p[f"{prefix}bo"])


def _feedforward(p, prefix: str, x: Tensor) -> Tensor:
    h = nx.silu(nx.affine(x, p[f"{prefix}w1"], p[f"{prefix}b1"]))
    return nx.affine(h, p[f"{prefix}w2"], p[f"{prefix}b2"])


def _block(p, prefix: str, h: Tensor, heads: int) -> Tensor:
    h = nx.add(h, _attention(p, prefix + "attn.", nx.rms_norm(h), heads))
    return nx.add(h, _feedforward(p, prefix + "ff.", nx.rms_norm(h)))


# -- text side ----------------------------------------------------------------
def encode_text(model: Model, tokens: np.ndarray) -> Tensor:
    """``(B, N)`` token ids -> ``(B, N, F)`` text features."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    cfg = model.config
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    p = model.params
    h = nx.take(p["text.embed"], tokens, axis=0)
    h = nx.add(h, nx.affine(sinusoid(np.arange(tokens.shape[1]), cfg.text_dim), p["text.pos"]))
    for k in range(cfg.text_layers):
        h = _block(p, f"text.blocks.{k}.", h, cfg.heads)
    return nx.rms_norm(h)


def add_speaker_embeddings(y_hat: Tensor, speaker_of_token: np.ndarray,
                           table: Tensor) -> Tensor:
    """``y_hat[b, i] + e[speaker[b, i]]`` for speakers in {1, 2}."""
    spk = np.asarray(speaker_of_token, dtype=np.int64)
    if spk.ndim == 1:
        spk = spk[None]
    if spk.shape != y_hat.shape[:2]:
        raise ValueError(f"speaker labels {spk.shape} do not match features {y_hat.shape}")
    if spk.size and not np.isin(spk, (1, 2)).all():
        raise ValueError("speaker ids must be 1 or 2")
    return nx.add(y_hat, nx.take(table, spk - 1, axis=0))


def text_condition(model: Model, tokens: np.ndarray, speakers: np.ndarray,
                   frames: int, speaker_embeddings: bool | None = None) -> Tensor:
    """Frame-level text condition ``z``: encode, add speaker-turn
    embeddings, average-upsample to ``frames``."""
    use = model.config.speaker_embeddings if speaker_embeddings is None else speaker_embeddings
    y = encode_text(model, tokens)
    if use:
        y = add_speaker_embeddings(y, speakers, model["spk.table"])
    return nx.take(y, upsample_index(y.shape[1], frames), axis=1)


# -- vector field ---------------------------------------------------------------
def estimate_vector_field(model: Model, x_t: np.ndarray, z: Tensor, cond: np.ndarray,
                          t: np.ndarray, head: Head = "mono",
                          keep: np.ndarray | None = None) -> Tensor:
    """Velocity for noisy features ``x_t`` (B, T, C*D).

    ``keep`` (B,) selects per example between the real conditions (1) and
    the learned null condition (0) used for classifier-free guidance.
    """
    cfg = model.config
    D = cfg.feat_dim
    channels = {"mono": 1, "stereo": 2}.get(head)
    if channels is None:
        raise ValueError(f"unknown head {head!r}")
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x_t.ndim == 2:
        x_t, cond = x_t[None], cond[None]
    if x_t.shape[-1] != channels * D:
        raise ValueError(f"{head} head expects {channels * D} feature columns, got {x_t.shape[-1]}")
    if cond.shape != x_t.shape:
        raise ValueError(f"speech condition {cond.shape} does not match x_t {x_t.shape}")
    if head == "stereo" and not model.has_stereo:
        raise ValueError("model has no stereo projections; call init_stereo_from_mono first")
    B, T, _ = x_t.shape
    p = model.params
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    h = _input_projection(model, x_t, z, cond, head, keep)
    h = nx.add(h, sinusoid(np.arange(T), cfg.hidden))
    tf = timestep_features(t, cfg.time_features)
    for k_ in range(cfg.trunk_layers):
        pre = f"vf.blocks.{k_}."
        temb = nx.affine(tf, p[pre + "time.w"], p[pre + "time.b"])
        h = nx.add(h, nx.reshape(temb, (B, 1, cfg.hidden)))
        h = _block(p, pre, h, cfg.heads)
    h = nx.rms_norm(h)
    outs = [nx.affine(h, p[f"vf.{head}.out.w{c}"], p[f"vf.{head}.out.b{c}"])
            for c in range(channels)]
    return outs[0] if channels == 1 else nx.concat(outs, axis=-1)


def _input_projection(model: Model, x_t: np.ndarray, z: Tensor, cond: np.ndarray,
                      head: Head, keep: np.ndarray | None) -> Tensor:
    # per-channel blocks [x_t | W_z z | cond] @ W_c, summed over channels
    D = model.config.feat_dim
    p = model.params
    B = x_t.shape[0]
    if keep is not None:
        k = np.asarray(keep, dtype=np.float64).reshape(B, 1, 1)
        z = nx.add(nx.mul(z, k), nx.mul(p["null.z"], 1.0 - k))
    h = None
    for c in range(x_t.shape[-1] // D):
        sl = slice(c * D, (c + 1) * D)
        cond_c: Tensor | np.ndarray = cond[..., sl]
        if keep is not None:
            cond_c = nx.add(cond_c * k, nx.mul(p["null.cond"], 1.0 - k))
        zp = nx.affine(z, p[f"vf.{head}.zproj.w{c}"], p[f"vf.{head}.zproj.b{c}"])
        proj = nx.affine(nx.concat([x_t[..., sl], zp, cond_c], axis=-1), p[f"vf.{head}.in.w{c}"])
        h = proj if h is None else nx.add(h, proj)
    return nx.add(h, p[f"vf.{head}.in.b"])


def trunk_input(model: Model, x_t, z: Tensor, cond, head: Head = "mono") -> np.ndarray:
    """Activations entering the trunk (after the input projection)."""
    x_t, cond = np.asarray(x_t, dtype=np.float64), np.asarray(cond, dtype=np.float64)
    if x_t.ndim == 2:
        x_t, cond = x_t[None], cond[None]
    return _input_projection(model, x_t, z, cond, head, None).data


# -- checkpoints ----------------------------------------------------------------
def save_checkpoint(path, model: Model, meta: dict | None = None) -> None:
    """``ZDCK`` | u32 version | u32 header length | JSON header | raw arrays."""
    arrays = [(n, np.ascontiguousarray(p.data, dtype="<f8")) for n, p in model.params.items()]
    header = {
        "config": asdict(model.config),
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in arrays],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb)
        for _, a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a ZDCK checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    off = 12 + hlen
    params = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(spec["shape"])
        off += n * dt.itemsize
        params[spec["name"]] = nx.parameter(a.astype(np.float64), spec["name"])
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return Model(ModelConfig.from_dict(header["config"]), params), header.get("meta", {})
