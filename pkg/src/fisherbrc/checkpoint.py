"""Versioned binary checkpoints for behavior models, critics and policies.

Layout (little-endian)::

    b"FBCK" | u32 version | u32 n_sections
    per section:
        8-byte ASCII tag (space padded) | u32 n | n bytes of UTF-8 JSON
        | u64 count | count f64 values

The JSON describes the section (architecture, mixture size, configs) and
lists ``[name, shape, dtype]`` for each array packed into the f64 block, so
float32 parameters come back as float32 with identical bits.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import jax.numpy as jnp
import numpy as np

MAGIC = b"FBCK"
VERSION = 1
_HEAD = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def _flatten_native(tree, prefix: str = "") -> dict[str, np.ndarray]:
    """Like :func:`flatten_params` but keeps each leaf's dtype."""
    if not isinstance(tree, dict):
        return {prefix.rstrip("/"): np.asarray(tree)}
    out = {}
    for k in sorted(tree):
        out.update(_flatten_native(tree[k], f"{prefix}{k}/"))
    return out


def write_checkpoint(path, sections: dict[str, tuple[dict, dict]]) -> None:
    """``sections`` maps tag -> (json-able metadata, nested dict of arrays)."""
    parts = [_HEAD.pack(MAGIC, VERSION, len(sections))]
    for tag, (meta, arrays) in sections.items():
        if len(tag) > 8 or not tag.isascii():
            raise CheckpointError(f"tag {tag!r} must be at most 8 ASCII characters")
        flat = _flatten_native(arrays) if arrays else {}
        layout = [[name, list(a.shape), a.dtype.name] for name, a in flat.items()]
        blob = json.dumps({"meta": meta, "arrays": layout}, sort_keys=True).encode()
        values = (np.concatenate([a.astype("<f8").reshape(-1) for a in flat.values()])
                  if flat else np.zeros(0, "<f8"))
        parts += [tag.ljust(8).encode(), struct.pack("<I", len(blob)), blob,
                  struct.pack("<Q", values.size), values.astype("<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> dict[str, tuple[dict, dict]]:
    """Inverse of :func:`write_checkpoint`; arrays come back as a nested dict."""
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: too short")
    magic, version, n = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos, out = _HEAD.size, {}
    try:
        for _ in range(n):
            tag = data[pos:pos + 8].decode().rstrip()
            (blen,) = struct.unpack_from("<I", data, pos + 8)
            info = json.loads(data[pos + 12:pos + 12 + blen].decode())
            pos += 12 + blen
            (count,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            if pos + 8 * count > len(data):
                raise CheckpointError(f"{path}: section {tag} truncated")
            values = np.frombuffer(data, "<f8", count, pos)
            pos += 8 * count
            flat, off = {}, 0
            for name, shape, dtype in info["arrays"]:
                size = int(np.prod(shape, dtype=np.int64))
                flat[name] = values[off:off + size].reshape(shape).astype(dtype)
                off += size
            if off != count:
                raise CheckpointError(f"{path}: section {tag} layout does not match its data")
            out[tag] = (info["meta"], _unflatten_native(flat))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last section")
    return out


def _unflatten_native(flat: dict[str, np.ndarray]) -> dict:
    tree: dict = {}
    for name, value in flat.items():
        node = tree
        *parents, leaf = name.split("/")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = jnp.asarray(value)
    return tree


# -- typed helpers -------------------------------------------------------------

def behavior_section(behavior) -> tuple[str, tuple[dict, dict]]:
    from .behavior import BehaviorModel, config_dict, hidden_sizes
    from .distributions import LaplaceParams

    if isinstance(behavior, BehaviorModel):
        meta = {"kind": "mixture", "state_dim": behavior.state_dim, "action_dim": behavior.action_dim,
                "n_components": behavior.n_components, "hidden": list(hidden_sizes(behavior.trunk)),
                "config": config_dict(behavior.config)}
        return "BEHAVIOR", (meta, behavior.trunk)
    if isinstance(behavior, LaplaceParams):
        meta = {"kind": "laplace", "low": float(behavior.low), "high": float(behavior.high)}
        return "BEHAVIOR", (meta, {"loc": behavior.loc, "scale": behavior.scale})
    raise TypeError(type(behavior).__name__)


def behavior_from_section(meta: dict, arrays: dict):
    from .behavior import BehaviorModel, bc_config_from_dict
    from .distributions import LaplaceParams

    if meta["kind"] == "laplace":
        return LaplaceParams(arrays["loc"], arrays["scale"], meta["low"], meta["high"])
    return BehaviorModel(arrays, meta["state_dim"], meta["action_dim"], meta["n_components"],
                         bc_config_from_dict(meta["config"]))


def save_behavior(path, behavior) -> None:
    tag, sec = behavior_section(behavior)
    write_checkpoint(path, {tag: sec})


def load_behavior(path):
    sections = read_checkpoint(path)
    if "BEHAVIOR" not in sections:
        raise CheckpointError(f"{path}: no behavior section")
    return behavior_from_section(*sections["BEHAVIOR"])


__all__ = ["CheckpointError", "write_checkpoint", "read_checkpoint", "save_behavior",
           "load_behavior", "behavior_section", "behavior_from_section"]
