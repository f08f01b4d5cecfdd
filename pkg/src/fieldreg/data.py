"""On-disk dataset format and image I/O.

Layout of a dataset directory:

    meta.json      format version, cameras, splits, scene description, seed
    rgb/NNN.png    8-bit sRGB (linearized on load by /255 only)
    depth/NNN.pfm  single-channel PFM, scene units
    normal/NNN.pfm 3-channel PFM

PFM files use the little-endian convention (scale header -1.0), float32
samples, bottom row first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .autodiff.tape import UsageError
from .cameras import Camera

FORMAT_VERSION = 1


class ParseError(ValueError):
    """Malformed file; carries the byte offset where parsing failed."""

    def __init__(self, path, offset, message):
        self.offset = offset
        super().__init__(f"{path} (byte {offset}): {message}")


# -- PFM ------------------------------------------------------------------------

def write_pfm(path, data):
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        tag, arr = b"Pf", data[:, :, None]
    elif data.ndim == 3 and data.shape[2] == 3:
        tag, arr = b"PF", data
    else:
        raise UsageError(f"PFM wants HxW or HxWx3 data, got {data.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(tag + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(arr).astype("<f4").tobytes())


def read_pfm(path):
    raw = Path(path).read_bytes()
    off = 0

    def token():
        nonlocal off
        while off < len(raw) and raw[off:off + 1].isspace():
            off += 1
        start = off
        while off < len(raw) and not raw[off:off + 1].isspace():
            off += 1
        if start == off:
            raise ParseError(path, start, "unexpected end of header")
        return raw[start:off], start

    tag, tag_off = token()
    if tag not in (b"Pf", b"PF"):
        raise ParseError(path, tag_off, f"bad PFM magic {tag!r}")
    channels = 1 if tag == b"Pf" else 3
    wtok, woff = token()
    htok, hoff = token()
    stok, soff = token()
    try:
        w, h = int(wtok), int(htok)
        scale = float(stok)
    except ValueError as e:
        raise ParseError(path, woff, f"bad header field: {e}") from e
    if w <= 0 or h <= 0:
        raise ParseError(path, woff, "non-positive dimensions")
    off += 1  # single whitespace byte after the scale line
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(raw) - off < count * 4:
        raise ParseError(path, off, f"expected {count * 4} sample bytes, have {len(raw) - off}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
    data = data.reshape(h, w, channels)
    data = np.flipud(data).copy()
    return data[:, :, 0] if channels == 1 else data


# -- PNG ------------------------------------------------------------------------

def write_png(path, rgb):
    """rgb in [0,1] -> 8-bit PNG."""
    arr = np.asarray(rgb, dtype=np.float64)
    q = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path, format="PNG")


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# -- datasets ---------------------------------------------------------------------

@dataclass
class SceneDataset:
    cameras: list
    images: list                       # (H, W, 3) arrays in [0,1]
    depths: Optional[list] = None      # (H, W) scene units
    normals: Optional[list] = None     # (H, W, 3)
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    scene_spec: Optional[dict] = None
    seed: int = 0

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise UsageError("train and test splits overlap")
        if len(self.train_ids) < 1:
            raise UsageError("dataset needs at least one training view")
        for cam, img in zip(self.cameras, self.images):
            if img.shape[:2] != (cam.height, cam.width):
                raise UsageError("image dimensions must match the camera image size")

    @property
    def n_views(self):
        return len(self.cameras)


def save_dataset(ds: SceneDataset, out_dir):
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    if ds.depths is not None:
        (out / "depth").mkdir(exist_ok=True)
    if ds.normals is not None:
        (out / "normal").mkdir(exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": ds.seed,
        "cameras": [c.to_json() for c in ds.cameras],
        "splits": {"train": list(map(int, ds.train_ids)), "test": list(map(int, ds.test_ids))},
        "scene": ds.scene_spec,
        "has_depth": ds.depths is not None,
        "has_normal": ds.normals is not None,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for k in range(ds.n_views):
        write_png(out / "rgb" / f"{k:03d}.png", ds.images[k])
        if ds.depths is not None:
            write_pfm(out / "depth" / f"{k:03d}.pfm", ds.depths[k])
        if ds.normals is not None:
            write_pfm(out / "normal" / f"{k:03d}.pfm", ds.normals[k])


def load_dataset(path):
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise UsageError(f"{root} is not a dataset directory (no meta.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise UsageError(f"unsupported dataset format version {meta.get('format_version')!r}")
    cams = [Camera.from_json(c) for c in meta["cameras"]]
    images = [read_png(root / "rgb" / f"{k:03d}.png") for k in range(len(cams))]
    depths = normals = None
    if meta.get("has_depth"):
        depths = [read_pfm(root / "depth" / f"{k:03d}.pfm").astype(np.float64)
                  for k in range(len(cams))]
    if meta.get("has_normal"):
        normals = [read_pfm(root / "normal" / f"{k:03d}.pfm").astype(np.float64)
                   for k in range(len(cams))]
    return SceneDataset(cameras=cams, images=images, depths=depths, normals=normals,
                        train_ids=meta["splits"]["train"], test_ids=meta["splits"]["test"],
                        scene_spec=meta.get("scene"), seed=meta.get("seed", 0))


# -- scene specs -------------------------------------------------------------------

class SceneSpecErrorAt(ValueError):
    """Malformed scene spec; names the offending key path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


def scene_from_json(spec, path="scene"):
    """Build an AnalyticScene from a JSON-able dict, reporting the key path
    of whatever is malformed."""
    from .scenes import AnalyticScene, Plane, RoundedBox, Sphere

    if not isinstance(spec, dict):
        raise SceneSpecErrorAt(path, "expected an object")
    prims = spec.get("primitives")
    if not isinstance(prims, list) or not prims:
        raise SceneSpecErrorAt(f"{path}.primitives", "expected a non-empty list")
    out = []
    for k, p in enumerate(prims):
        where = f"{path}.primitives[{k}]"
        if not isinstance(p, dict) or "kind" not in p:
            raise SceneSpecErrorAt(where, "expected an object with a 'kind'")
        kind = p["kind"]
        try:
            if kind == "sphere":
                out.append(Sphere(center=tuple(p["center"]), radius=float(p["radius"]),
                                  albedo=tuple(p.get("albedo", (0.8, 0.3, 0.3)))))
            elif kind == "box":
                out.append(RoundedBox(center=tuple(p["center"]),
                                      half_extents=tuple(p["half_extents"]),
                                      rounding=float(p.get("rounding", 0.0)),
                                      albedo=tuple(p.get("albedo", (0.3, 0.5, 0.8)))))
            elif kind == "plane":
                out.append(Plane(normal=tuple(p["normal"]), offset=float(p.get("offset", 0.0)),
                                 albedo=tuple(p.get("albedo", (0.6, 0.6, 0.6)))))
            else:
                raise SceneSpecErrorAt(f"{where}.kind", f"unknown primitive kind '{kind}'")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SceneSpecErrorAt):
                raise
            raise SceneSpecErrorAt(where, str(e)) from e
    kwargs = {}
    if "blend_sharpness" in spec:
        kwargs["blend_sharpness"] = float(spec["blend_sharpness"])
    if "light_direction" in spec:
        kwargs["light_direction"] = tuple(spec["light_direction"])
    if "ambient" in spec:
        kwargs["ambient"] = float(spec["ambient"])
    return AnalyticScene(primitives=tuple(out), **kwargs)


def scene_to_json(scene):
    from .scenes import Plane, RoundedBox, Sphere

    prims = []
    for p in scene.primitives:
        if isinstance(p, Sphere):
            prims.append({"kind": "sphere", "center": list(p.center), "radius": p.radius,
                          "albedo": list(p.albedo)})
        elif isinstance(p, RoundedBox):
            prims.append({"kind": "box", "center": list(p.center),
                          "half_extents": list(p.half_extents), "rounding": p.rounding,
                          "albedo": list(p.albedo)})
        elif isinstance(p, Plane):
            prims.append({"kind": "plane", "normal": list(p.normal), "offset": p.offset,
                          "albedo": list(p.albedo)})
    return {"primitives": prims, "blend_sharpness": scene.blend_sharpness,
            "light_direction": list(scene.light_direction), "ambient": scene.ambient}


def generate_dataset(scene, n_train=3, n_test=4, radius=4.0, resolution=64, seed=0,
                     focal=None, noise_std=0.0):
    """Render a synthetic few-view dataset from an analytic scene."""
    from .scenes import camera_ring, oracle_render_view

    train_cams, test_cams = camera_ring(scene, n_train, n_test, radius, resolution, seed,
                                        focal=focal)
    cams = train_cams + test_cams
    images, depths, normals = [], [], []
    rng = np.random.default_rng(seed + 1)
    for cam in cams:
        rgb, depth, normal = oracle_render_view(scene, cam)
        if noise_std > 0:
            rgb = np.clip(rgb + rng.normal(0.0, noise_std, size=rgb.shape), 0.0, 1.0)
        images.append(rgb)
        depths.append(depth)
        normals.append(normal)
    return SceneDataset(cameras=cams, images=images, depths=depths, normals=normals,
                        train_ids=list(range(n_train)),
                        test_ids=list(range(n_train, n_train + n_test)),
                        scene_spec=scene_to_json(scene), seed=seed)
