"""Continuous scene fields: radiance (x,v) -> (c, sigma) and SDF x -> F(x).

All activations are softplus (beta=1), so every field output is smooth and
first/second spatial derivatives exist everywhere. Evaluation is generic
over the autodiff scalar types: positions may be plain arrays, duals, or
carry tape Vars, and parameters may be swapped for tape Vars during
training via the ``params=`` argument.

Parameters live in a flat {name: float64 ndarray} dict. Layer order (and
the checkpoint block order) is the dict insertion order produced by
``init_params``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict, field

import numpy as np

from .autodiff import ops, gradient
from .autodiff.dual import primal
from .autodiff.tape import UsageError

EPS_NORMAL = 1e-8

CHECKPOINT_MAGIC = b"FIELDCKP"
CHECKPOINT_VERSION = 1


class DegenerateNormalError(ArithmeticError):
    """Field gradient vanished where a surface normal was requested."""


class CheckpointVersionError(ValueError):
    pass


@dataclass(frozen=True)
class PositionalEncoding:
    """Sin/cos feature lift with frequencies 2^k * pi, k = 0..L-1."""

    num_frequencies_position: int = 8
    num_frequencies_direction: int = 4
    include_input: bool = True

    def dim(self, kind="position", in_dim=3):
        n = (self.num_frequencies_position if kind == "position"
             else self.num_frequencies_direction)
        return in_dim * (2 * n + (1 if self.include_input else 0))


def encode(p, cfg: PositionalEncoding, kind="position"):
    """Lift a point or direction to its Fourier features.

    Layout: [p?, sin(f0 p), cos(f0 p), sin(f1 p), cos(f1 p), ...] along the
    last axis, with f_k = 2^k * pi.
    """
    p = ops.asfloat(p)
    n = (cfg.num_frequencies_position if kind == "position"
         else cfg.num_frequencies_direction)
    parts = [p] if cfg.include_input else []
    for k in range(n):
        f = (2.0 ** k) * np.pi
        scaled = p * f
        parts.append(ops.sin(scaled))
        parts.append(ops.cos(scaled))
    if not parts:
        raise UsageError("encoding with 0 frequencies and no passthrough is empty")
    if len(parts) == 1:
        return parts[0]
    return ops.concat(parts, axis=-1)


@dataclass(frozen=True)
class RadianceConfig:
    depth: int = 6
    width: int = 128
    skip_at: int = 3  # trunk layer whose input gets the encoding re-appended; -1 disables
    color_hidden: int = 64
    encoding: PositionalEncoding = field(default_factory=PositionalEncoding)


@dataclass(frozen=True)
class SdfConfig:
    depth: int = 6
    width: int = 128
    skip_at: int = 3
    radius_init: float = 1.0
    color_hidden: int = 0  # 0 disables the (view-independent) albedo head
    encoding: PositionalEncoding = field(default_factory=PositionalEncoding)


def _linear_params(rng, fan_in, fan_out, scale=None):
    s = scale if scale is not None else np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, s, size=(fan_in, fan_out)), np.zeros(fan_out)


def _apply_linear(h, params, name):
    return h @ params[f"{name}.w"] + params[f"{name}.b"]


def _trunk(h_in, params, depth, skip_at):
    h = h_in
    for i in range(depth):
        if i == skip_at and i > 0:
            h = ops.concat([h, h_in], axis=-1)
        h = ops.softplus(_apply_linear(h, params, f"trunk.{i}"))
    return h


class RadianceFieldModel:
    """Softplus MLP radiance field; density from x only, color from (x, v)."""

    kind = "radiance"

    def __init__(self, config: RadianceConfig = RadianceConfig(), seed: int = 0, params=None):
        self.config = config
        self.seed = int(seed)
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        enc_dim = cfg.encoding.dim("position")
        dir_dim = cfg.encoding.dim("direction")
        p = {}
        fan = enc_dim
        for i in range(cfg.depth):
            if i == cfg.skip_at and i > 0:
                fan += enc_dim
            p[f"trunk.{i}.w"], p[f"trunk.{i}.b"] = _linear_params(rng, fan, cfg.width)
            fan = cfg.width
        p["sigma.w"], p["sigma.b"] = _linear_params(rng, cfg.width, 1, scale=np.sqrt(1.0 / cfg.width))
        p["color.0.w"], p["color.0.b"] = _linear_params(rng, cfg.width + dir_dim, cfg.color_hidden)
        p["color.1.w"], p["color.1.b"] = _linear_params(
            rng, cfg.color_hidden, 3, scale=np.sqrt(1.0 / cfg.color_hidden))
        return p

    def features(self, x, params=None):
        params = params if params is not None else self.params
        cfg = self.config
        return _trunk(encode(x, cfg.encoding, "position"), params, cfg.depth, cfg.skip_at)

    def density(self, x, params=None):
        """sigma(x) >= 0, shape (...,)."""
        params = params if params is not None else self.params
        h = self.features(x, params)
        return ops.softplus(_apply_linear(h, params, "sigma"))[..., 0]

    def density_from_features(self, h, params=None):
        params = params if params is not None else self.params
        return ops.softplus(_apply_linear(h, params, "sigma"))[..., 0]

    def color_from_features(self, h, v, params=None):
        params = params if params is not None else self.params
        enc_d = encode(v, self.config.encoding, "direction")
        hc = ops.softplus(_apply_linear(ops.concat([h, enc_d], axis=-1), params, "color.0"))
        return ops.sigmoid(_apply_linear(hc, params, "color.1"))

    def color(self, x, v, params=None):
        return self.color_from_features(self.features(x, params), v, params)


def eval_radiance(model: RadianceFieldModel, x, v, params=None):
    """(c, sigma) at position x viewed along unit direction v."""
    vv = primal(ops.asfloat(v))
    norms = np.linalg.norm(np.atleast_2d(vv), axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise UsageError("view direction must be unit length (within 1e-9)")
    h = model.features(x, params)
    return (model.color_from_features(h, v, params),
            model.density_from_features(h, params))


class SdfFieldModel:
    """Softplus MLP signed-distance field, geometrically initialized.

    Initialization builds an approximate sphere of radius r0: the first
    layer holds opposite-sign direction pairs so softplus(a) + softplus(-a)
    forms a smooth |a| per pair (a norm-like ridge expansion), the deeper
    trunk layers start near identity, and the head averages the units.
    A final two-point calibration pins F = 0 at radius r0 with a unit mean
    radial slope, which also puts the field near the Eikonal regime.
    """

    kind = "sdf"

    def __init__(self, config: SdfConfig = SdfConfig(), seed: int = 0, params=None):
        self.config = config
        self.seed = int(seed)
        self.params = params if params is not None else self._init_params()

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(self.seed)
        enc_dim = cfg.encoding.dim("position")
        raw = 3 if cfg.encoding.include_input else 0
        if not raw:
            raise UsageError("SDF geometric init needs include_input encoding")
        width = cfg.width
        p = {}
        half = width // 2
        w = np.zeros((enc_dim, width))
        dirs = rng.normal(size=(3, half)) * 2.0
        w[:raw, :half] = dirs
        w[:raw, half:2 * half] = -dirs
        p["trunk.0.w"] = w + rng.normal(0.0, 1e-3, size=w.shape)
        p["trunk.0.b"] = np.zeros(width)
        for i in range(1, cfg.depth):
            fin = width + enc_dim if i == cfg.skip_at else width
            w = np.zeros((fin, width))
            w[:width, :width] = np.eye(width)
            p[f"trunk.{i}.w"] = w + rng.normal(0.0, 1e-3, size=w.shape)
            p[f"trunk.{i}.b"] = np.zeros(width)
        p["sdf.w"] = np.full((width, 1), 1.0 / width) + rng.normal(0.0, 1e-4, size=(width, 1))
        p["sdf.b"] = np.array([0.0])
        if cfg.color_hidden:
            p["rgb.0.w"], p["rgb.0.b"] = _linear_params(rng, cfg.width, cfg.color_hidden)
            p["rgb.1.w"], p["rgb.1.b"] = _linear_params(
                rng, cfg.color_hidden, 3, scale=np.sqrt(1.0 / cfg.color_hidden))
        self.params = p
        self._calibrate(rng)
        return p

    def _calibrate(self, rng):
        # two-point fit: zero level at r0, unit mean radial slope
        r0 = self.config.radius_init
        probe = rng.normal(size=(256, 3))
        probe /= np.linalg.norm(probe, axis=-1, keepdims=True)
        f1 = np.mean(self.sdf(probe * r0))
        f2 = np.mean(self.sdf(probe * 1.5 * r0))
        s = (f2 - f1) / (0.5 * r0)
        self.params["sdf.w"] = self.params["sdf.w"] / s
        self.params["sdf.b"] = (self.params["sdf.b"] - f1) / s

    def features(self, x, params=None):
        params = params if params is not None else self.params
        cfg = self.config
        return _trunk(encode(x, cfg.encoding, "position"), params, cfg.depth, cfg.skip_at)

    def sdf(self, x, params=None):
        params = params if params is not None else self.params
        return _apply_linear(self.features(x, params), params, "sdf")[..., 0]

    def sdf_from_features(self, h, params=None):
        params = params if params is not None else self.params
        return _apply_linear(h, params, "sdf")[..., 0]

    def color(self, x, params=None):
        params = params if params is not None else self.params
        if "rgb.0.w" not in params:
            raise UsageError("this SDF model has no albedo head (color_hidden=0)")
        h = ops.softplus(_apply_linear(self.features(x, params), params, "rgb.0"))
        return ops.sigmoid(_apply_linear(h, params, "rgb.1"))


def eval_sdf(model: SdfFieldModel, x, params=None):
    return model.sdf(x, params)


def scene_normal(model, x, params=None):
    """Unit surface normal at x: grad F normalized for SDFs, minus grad
    sigma normalized for radiance fields."""
    x = np.asarray(x, dtype=np.float64)
    if model.kind == "sdf":
        g = gradient(lambda d: model.sdf(d, params), x)
    else:
        g = gradient(lambda d: model.density(d, params), x)
        g = -g
    g = np.moveaxis(primal(g), 0, -1) if x.ndim > 1 else primal(g)
    nrm = np.linalg.norm(g, axis=-1)
    if np.any(nrm <= EPS_NORMAL):
        raise DegenerateNormalError(f"gradient norm {nrm.min():.3e} below {EPS_NORMAL}")
    return g / nrm[..., None]


# -- checkpoints -------------------------------------------------------------

_CONFIG_TYPES = {"radiance": RadianceConfig, "sdf": SdfConfig}
_MODEL_TYPES = {"radiance": RadianceFieldModel, "sdf": SdfFieldModel}


def _config_to_json(cfg):
    d = asdict(cfg)
    return d


def _config_from_json(kind, d):
    d = dict(d)
    d["encoding"] = PositionalEncoding(**d["encoding"])
    return _CONFIG_TYPES[kind](**d)


def save_checkpoint(model, path, extra_blocks=None):
    """Versioned container: magic, u64 header length, JSON header, then raw
    little-endian float64 blocks in the order listed by the header."""
    extra_blocks = extra_blocks or {}
    header = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "seed": model.seed,
        "config": _config_to_json(model.config),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
        "extra_blocks": [{"name": k, "shape": list(np.asarray(v).shape)}
                         for k, v in extra_blocks.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(np.uint64(len(blob)).tobytes())
    buf.write(blob)
    for v in model.params.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    for v in extra_blocks.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (model, extra_blocks dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointVersionError("not a field checkpoint (bad magic)")
    hlen = int(np.frombuffer(raw[8:16], dtype=np.uint64)[0])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {header.get('format_version')!r}, expected {CHECKPOINT_VERSION}")
    off = 16 + hlen
    params = {}
    for spec in header["params"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(spec["shape"]).copy()
        params[spec["name"]] = arr
        off += 8 * n
    extras = {}
    for spec in header["extra_blocks"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        extras[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(spec["shape"]).copy()
        off += 8 * n
    cfg = _config_from_json(header["kind"], header["config"])
    model = _MODEL_TYPES[header["kind"]](cfg, seed=header["seed"], params=params)
    return model, extras


def num_params(model):
    return int(sum(v.size for v in model.params.values()))
