"""Adapter checkpoints (``.moft``).

Layout::

    0..7    magic  b"MOFTCKP1"
    8..15   manifest length, u64 little-endian
    16..    manifest, UTF-8 JSON with sorted keys
    ...     MTB1 blobs in the order listed under ``manifest["blobs"]``

Only the trainable state is stored. ``A``, ``B`` and ``W_res`` are rebuilt
from ``W_pre`` and the manifest. ``source_sha256`` (a hash of the float64
bytes of ``W_pre``) guards against a mismatched weight file;
``decomposition_sha256`` identifies the exact factors but can differ in the
last bits between kernel backends, so it is informational.
"""
import hashlib
import json
import struct

import numpy as np

from .adapter import MoftAdapter
from .cayley import CayleyParams
from .errors import FormatError, InvalidInput
from .subspace import SvdMode, Variant, decompose
from .tensorio import decode_tensor, encode_tensor

MAGIC = b"MOFTCKP1"
LENGTH = struct.Struct("<Q")
FORMAT_VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def source_sha256(W):
    return hashlib.sha256(np.ascontiguousarray(W, dtype=np.float64).tobytes()).hexdigest()


def decomposition_sha256(dec):
    h = hashlib.sha256()
    for m in (dec.A, dec.B, dec.W_res):
        h.update(encode_tensor(m))
    return h.hexdigest()


def encode_checkpoint(adapter, seed=0, extra=None):
    dec = adapter.dec
    if dec.source_sha256 is None:
        raise InvalidInput("decomposition has no source hash")
    blobs = [("q", encode_tensor(adapter.cayley.q.reshape(1, -1), allow_empty=True))]
    if adapter.scaling_enabled:
        blobs.append(("alpha", encode_tensor(adapter.alpha.reshape(1, -1))))
        blobs.append(("beta", encode_tensor(adapter.beta.reshape(1, -1))))
    manifest = {
        "format_version": FORMAT_VERSION,
        "d": dec.d,
        "n": dec.n,
        "rank": dec.r,
        "variant": dec.variant.value,
        "svd_mode": dec.svd_mode.to_dict(),
        "scaling_enabled": adapter.scaling_enabled,
        "seed": seed,
        "source_sha256": dec.source_sha256,
        "decomposition_sha256": decomposition_sha256(dec),
        "blobs": [{"name": name, "length": len(b)} for name, b in blobs],
    }
    if extra:
        manifest["extra"] = extra
    head = canonical_json(manifest).encode("utf-8")
    return b"".join([MAGIC, LENGTH.pack(len(head)), head] + [b for _, b in blobs])


def decode_checkpoint(buf):
    """Return ``(manifest, params)`` where params holds 1-D arrays."""
    buf = memoryview(buf)
    if len(buf) < len(MAGIC) + LENGTH.size:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    if bytes(buf[:8]) != MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(buf[:8])!r}", offset=0)
    (mlen,) = LENGTH.unpack_from(buf, 8)
    start = 16
    if start + mlen > len(buf):
        raise FormatError("truncated manifest", offset=len(buf))
    try:
        manifest = json.loads(bytes(buf[start:start + mlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}", offset=start) from None
    for key in ("d", "n", "rank", "variant", "svd_mode", "scaling_enabled", "blobs", "source_sha256"):
        if key not in manifest:
            raise FormatError(f"manifest lacks {key!r}", offset=start)
    pos = start + mlen
    params = {}
    for entry in manifest["blobs"]:
        end = pos + int(entry["length"])
        if end > len(buf):
            raise FormatError(f"truncated blob {entry['name']!r}", offset=len(buf))
        try:
            params[entry["name"]] = decode_tensor(buf[pos:end], allow_empty=True).reshape(-1)
        except FormatError as exc:
            raise FormatError(f"blob {entry['name']!r}: {exc.detail}", offset=pos + (exc.offset or 0)) from None
        pos = end
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last blob", offset=pos)
    return manifest, params


def save_checkpoint(path, adapter, seed=0, extra=None):
    data = encode_checkpoint(adapter, seed, extra)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def restore_adapter(manifest, params, W_pre):
    """Rebuild the adapter on ``W_pre``, checking it matches the checkpoint."""
    W_pre = np.asarray(W_pre)
    if W_pre.shape != (manifest["d"], manifest["n"]):
        raise InvalidInput(f"weights are {W_pre.shape}, checkpoint expects ({manifest['d']}, {manifest['n']})")
    if source_sha256(W_pre) != manifest["source_sha256"]:
        raise InvalidInput("weights do not match the ones the checkpoint was trained on")
    dec = decompose(W_pre, manifest["rank"], Variant(manifest["variant"]), SvdMode.from_dict(manifest["svd_mode"]))
    scaling = bool(manifest["scaling_enabled"])
    cayley = CayleyParams(dec.r, params["q"])
    if scaling:
        return MoftAdapter(dec, cayley, params["alpha"], params["beta"], scaling_enabled=True)
    return MoftAdapter(dec, cayley, scaling_enabled=False)
