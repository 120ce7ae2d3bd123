"""Bit-exact file formats: HNDF datasets, HNDW checkpoints, and the
line-oriented ``key = value`` config text.

Everything is fixed little-endian so files parse identically on any
platform.
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import hand_model as hm
from .errors import ParseError
from .simulator import CM_PER_UNIT, DomainSpec, LabeledSample

DATASET_MAGIC = b"HNDF"
CHECKPOINT_MAGIC = b"HNDW"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1


class _Reader:
    def __init__(self, data, what):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated {self.what}", offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def array(self, dtype, count):
        raw = self.take(np.dtype(dtype).itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count)


@dataclass
class Dataset:
    """In-memory dataset: labeled simulator samples plus calibration."""

    samples: list
    cm_per_unit: float = CM_PER_UNIT
    domains: list = field(default_factory=list)
    gesture_ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def csi_shape(self):
        c = self.samples[0].csi
        return c.shape

    def domain_split(self):
        by_domain = {}
        for s in self.samples:
            by_domain.setdefault(s.domain_id, []).append(s)
        return by_domain


def write_dataset(path, dataset):
    buf = io.BytesIO()
    first = dataset.samples[0]
    f, t, ant = first.csi.shape
    side = first.mask.shape[0]
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<HHHHHHIf", DATASET_VERSION, f, t, ant,
                          hm.N_JOINTS, side, len(dataset.samples),
                          dataset.cm_per_unit))
    buf.write(struct.pack("<H", len(dataset.domains)))
    for d in dataset.domains:
        buf.write(struct.pack("<HfffQ", d.domain_id, *d.offset_m, d.static_seed))
    buf.write(struct.pack("<H", len(dataset.gesture_ids)))
    for g in dataset.gesture_ids:
        buf.write(struct.pack("<H", g))
    for s in dataset.samples:
        csi32 = np.ascontiguousarray(s.csi, dtype=np.complex64)
        inter = np.empty(csi32.size * 2, dtype="<f4")
        inter[0::2] = csi32.real.ravel()
        inter[1::2] = csi32.imag.ravel()
        buf.write(inter.tobytes())
        buf.write(np.packbits(s.mask.astype(np.uint8), axis=1).tobytes())
        buf.write(np.asarray(s.pose, dtype="<f4").tobytes())
        buf.write(struct.pack("<Hh", s.domain_id, s.gesture_id))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_dataset(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, "dataset file")
    if r.take(4) != DATASET_MAGIC:
        raise ParseError("bad dataset magic", offset=0)
    version, f, t, ant, j, side, n, cm_per_unit = r.unpack("HHHHHHIf")
    if version > DATASET_VERSION:
        raise ParseError(f"unsupported dataset version {version}", offset=4)
    if j != hm.N_JOINTS:
        raise ParseError(f"expected {hm.N_JOINTS} joints, file has {j}")
    (nd,) = r.unpack("H")
    domains = []
    for _ in range(nd):
        did, ox, oy, oz, seed = r.unpack("HfffQ")
        domains.append(DomainSpec(domain_id=did, offset_m=(ox, oy, oz),
                                  static_seed=seed))
    (ng,) = r.unpack("H")
    gesture_ids = [r.unpack("H")[0] for _ in range(ng)]
    row_bytes = (side + 7) // 8
    samples = []
    for idx in range(n):
        try:
            inter = r.array("<f4", f * t * ant * 2)
            csi = (inter[0::2] + 1j * inter[1::2]).astype(np.complex64)
            csi = csi.reshape(f, t, ant)
            packed = np.frombuffer(r.take(side * row_bytes), dtype=np.uint8)
            mask = np.unpackbits(packed.reshape(side, row_bytes), axis=1)[:, :side]
            pose = r.array("<f4", hm.N_JOINTS * 3).reshape(hm.N_JOINTS, 3)
            did, gid = r.unpack("Hh")
        except ParseError as exc:
            raise ParseError(f"truncated record {idx}", offset=exc.offset) from exc
        if not np.all(np.isfinite(pose)):
            raise ParseError(f"non-finite pose in record {idx}")
        samples.append(LabeledSample(csi=csi, mask=mask.astype(np.uint8),
                                     pose=pose.astype(np.float64),
                                     domain_id=did, gesture_id=gid))
    if r.pos != len(data):
        raise ParseError("trailing bytes after final record", offset=r.pos)
    return Dataset(samples=samples, cm_per_unit=cm_per_unit, domains=domains,
                   gesture_ids=gesture_ids)


def write_checkpoint(path, state_dict, network_config, loss_weights=None,
                     seed=0, step=0):
    header = {
        "network": network_config.as_dict(),
        "loss_weights": loss_weights.as_dict() if loss_weights else None,
        "seed": int(seed),
        "step": int(step),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    items = list(state_dict.items())
    buf.write(struct.pack("<I", len(items)))
    for name, tensor in items:
        arr = np.ascontiguousarray(
            tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor)
            else tensor,
            dtype="<f4",
        )
        enc = name.encode()
        buf.write(struct.pack("<H", len(enc)))
        buf.write(enc)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_checkpoint(path):
    """Returns (header dict, name -> float32 ndarray)."""
    from .network import NetworkConfig
    from .losses import LossWeights

    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, "checkpoint file")
    if r.take(4) != CHECKPOINT_MAGIC:
        raise ParseError("bad checkpoint magic", offset=0)
    version, blob_len = r.unpack("HI")
    if version > CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)
    try:
        header = json.loads(r.take(blob_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad checkpoint header: {exc}", offset=10) from exc
    header["network"] = NetworkConfig.from_dict(header["network"])
    if header.get("loss_weights"):
        header["loss_weights"] = LossWeights.from_dict(header["loss_weights"])
    (n,) = r.unpack("I")
    params = {}
    for _ in range(n):
        (name_len,) = r.unpack("H")
        name = r.take(name_len).decode()
        if name in params:
            raise ParseError(f"duplicate parameter {name}", offset=r.pos)
        (ndim,) = r.unpack("B")
        shape = tuple(r.unpack("I" * ndim)) if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        params[name] = r.array("<f4", count).reshape(shape).copy()
    if r.pos != len(data):
        raise ParseError("trailing bytes after parameters", offset=r.pos)
    return header, params


def load_model(path):
    """Rebuild a HandNet from a checkpoint."""
    from .network import HandNet

    header, params = read_checkpoint(path)
    model = HandNet(header["network"], seed=header["seed"])
    state = {k: torch.as_tensor(v) for k, v in params.items()}
    model.load_state_dict(state)
    return model, header


# ---------------------------------------------------------------------------
# config text


def parse_config_text(text):
    """``key = value`` lines; '#' starts a comment; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_config_text(values):
    return "".join(f"{k} = {v}\n" for k, v in values.items())


def read_config(path):
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def write_config(path, values):
    with open(path, "w") as fh:
        fh.write(format_config_text(values))
