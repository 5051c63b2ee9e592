"""
Versioned binary checkpoints.

File layout:
    MAGIC (8 bytes) | format version (u32) | header length (u64)
    | JSON header | array blob | sha256 of everything before it (32 bytes)

The header is the checkpoint tree with every numpy array replaced by a
reference into the blob. Keys are sorted and floats are written with repr,
so save -> load -> save reproduces the file byte for byte.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from .envs import EnvSpec
from .errors import ChecksumError, CheckpointVersionError, IncompatibleCheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"SRLCKPT\x00"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
_PREFIX = struct.Struct("<8sIQ")
_DIGEST_SIZE = 32
_ARRAY_KEY = "__ndarray__"


def env_hash(spec: EnvSpec) -> str:
    """Stable hash of a task description, perturbation included."""
    payload = json.dumps(spec.fingerprint(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    """
    Everything needed to resume or hand off a run.

    Attributes:
        algo: Agent algorithm tag
        env_hash: Hash of the task the agent was trained on
        step: Global environment step
        agent: Agent.state_dict() (networks, optimizers, normalizer, scaler)
        rng: Bit-generator states by stream name
        run: Harness state (in-flight episode, counters, config)
        format_version: Container version
    """

    algo: str
    env_hash: str
    step: int
    agent: Dict[str, Any]
    rng: Dict[str, Any] = field(default_factory=dict)
    run: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _flatten(obj: Any, arrays: List[np.ndarray]) -> Any:
    if isinstance(obj, np.ndarray):
        arrays.append(np.ascontiguousarray(obj))
        return {_ARRAY_KEY: len(arrays) - 1, "dtype": obj.dtype.str, "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {str(k): _flatten(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_flatten(v, arrays) for v in obj]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _restore(obj: Any, arrays: List[np.ndarray]) -> Any:
    if isinstance(obj, dict):
        if _ARRAY_KEY in obj:
            return arrays[obj[_ARRAY_KEY]]
        return {k: _restore(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v, arrays) for v in obj]
    return obj


def _array_refs(obj: Any, out: List[Tuple[int, str, List[int]]]) -> None:
    if isinstance(obj, dict):
        if _ARRAY_KEY in obj:
            out.append((obj[_ARRAY_KEY], obj["dtype"], obj["shape"]))
            return
        for v in obj.values():
            _array_refs(v, out)
    elif isinstance(obj, list):
        for v in obj:
            _array_refs(v, out)


def encode_checkpoint(cp: Checkpoint) -> bytes:
    """Serialize a checkpoint to bytes."""
    arrays: List[np.ndarray] = []
    tree = _flatten({
        "algo": cp.algo,
        "env_hash": cp.env_hash,
        "step": cp.step,
        "agent": cp.agent,
        "rng": cp.rng,
        "run": cp.run,
    }, arrays)
    header = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(a.tobytes() for a in arrays)
    body = _PREFIX.pack(MAGIC, cp.format_version, len(header)) + header + blob
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    """
    Parse checkpoint bytes.

    Raises:
        ChecksumError: Wrong magic, truncated or corrupted content
        CheckpointVersionError: Intact file written with an unknown version
    """
    if len(data) < _PREFIX.size + _DIGEST_SIZE:
        raise ChecksumError("Checkpoint is truncated")
    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    magic, version, header_len = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise ChecksumError("Not a checkpoint file (bad magic)")
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("Checkpoint checksum mismatch: file is corrupt or truncated")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointVersionError(
            f"Checkpoint format version {version} is not supported (supported: {SUPPORTED_VERSIONS})"
        )

    start = _PREFIX.size
    header = json.loads(body[start:start + header_len].decode("utf-8"))
    refs: List[Tuple[int, str, List[int]]] = []
    _array_refs(header, refs)
    arrays: List[np.ndarray] = [np.empty(0)] * len(refs)
    offset = start + header_len
    for index, dtype, shape in sorted(refs):
        dt = np.dtype(dtype)
        count = int(np.prod(shape)) if shape else 1
        size = count * dt.itemsize
        arrays[index] = np.frombuffer(body, dtype=dt, count=count, offset=offset).reshape(shape).copy()
        offset += size
    if offset != len(body):
        raise ChecksumError("Checkpoint blob length does not match its header")

    tree = _restore(header, arrays)
    return Checkpoint(
        algo=tree["algo"],
        env_hash=tree["env_hash"],
        step=int(tree["step"]),
        agent=tree["agent"],
        rng=tree["rng"],
        run=tree["run"],
        format_version=version,
    )


def save_checkpoint(cp: Checkpoint, path: Union[str, Path]) -> Path:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(cp))
    os.replace(tmp, path)
    logger.info("Saved %s checkpoint at step %d to %s", cp.algo, cp.step, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    cp = decode_checkpoint(Path(path).read_bytes())
    logger.info("Loaded %s checkpoint at step %d from %s", cp.algo, cp.step, path)
    return cp


def require_env(cp: Checkpoint, spec: EnvSpec) -> None:
    """Refuse to resume a run on a different task than the one it was saved from."""
    if cp.env_hash != env_hash(spec):
        raise IncompatibleCheckpointError(
            f"Checkpoint was written for a different environment ({cp.env_hash[:12]} vs {env_hash(spec)[:12]})"
        )
