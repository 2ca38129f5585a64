"""Self-describing binary container for policy snapshots.

Layout: magic ``CLNC``, u32 format version, u64 manifest length, a JSON
manifest, then the raw parameter payload. The manifest records the
network spec, training metadata (algorithm, env_kind, seed, steps, plus
anything else the writer adds), and for every named array its shape and
offset into the payload. Arrays are float32, little-endian, stored in
manifest order, so a file can be unpacked without any framework on hand.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile

import numpy as np

from .nets import NetPolicy, NetworkSpec, PolicyNet

_MAGIC = b"CLNC"
_VERSION = 1
_REQUIRED_META = ("algorithm", "env_kind", "seed", "steps")


class CheckpointError(Exception):
    pass


@dataclasses.dataclass
class Checkpoint:
    spec: NetworkSpec
    params: dict[str, np.ndarray]
    meta: dict

    def build_net(self) -> PolicyNet:
        net = PolicyNet(self.spec)
        net.load_params(self.params)
        return net


def save_checkpoint(path: str | os.PathLike, spec: NetworkSpec,
                    params: dict[str, np.ndarray], meta: dict) -> None:
    missing = [key for key in _REQUIRED_META if key not in meta]
    if missing:
        raise CheckpointError(f"metadata missing {missing}")
    arrays = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset,
                       "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size * 4
    manifest = json.dumps({"spec": spec.to_dict(), "meta": meta,
                           "arrays": arrays}).encode()
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IQ", _VERSION, len(manifest)))
            fh.write(manifest)
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    version, manifest_len = struct.unpack_from("<IQ", blob, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    header_end = 16 + manifest_len
    try:
        manifest = json.loads(blob[16:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    payload = blob[header_end:]
    params = {}
    for entry in manifest["arrays"]:
        start = entry["offset"]
        stop = start + entry["count"] * 4
        if stop > len(payload):
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        arr = np.frombuffer(payload[start:stop], dtype="<f4")
        params[entry["name"]] = arr.reshape(entry["shape"]).copy()
    spec = NetworkSpec.from_dict(manifest["spec"])
    return Checkpoint(spec=spec, params=params, meta=manifest["meta"])


def save_net(path: str | os.PathLike, net: PolicyNet, meta: dict) -> None:
    save_checkpoint(path, net.spec, net.state_dict_np(), meta)


def load_policy(path: str | os.PathLike, policy_id: str | None = None,
                greedy: bool = False) -> NetPolicy:
    ckpt = load_checkpoint(path)
    if policy_id is None:
        policy_id = ckpt.meta.get("policy_id",
                                  os.path.splitext(os.path.basename(path))[0])
    return NetPolicy(ckpt.build_net(), policy_id, greedy=greedy)
