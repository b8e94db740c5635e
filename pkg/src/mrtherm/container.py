"""Binary array container and the session/checkpoint persistence built on it.

Container layout (all integers little-endian):

    magic    4 bytes  b"MRTS"
    version  u16      currently 1
    count    u32      number of entries
    entry:
        name_len u16, name  UTF-8 bytes
        dtype    u8        f32=1, f64=2, c64=3, c128=4, u8=5
        ndim     u8
        dims     u64 x ndim
        payload  raw little-endian array bytes (C order)

Entry names are unique.  Loading verifies magic, version, name uniqueness
and exact payload length, and reports the byte offset of any violation.
"""

from __future__ import annotations

import struct
from typing import Dict

import numpy as np

MAGIC = b"MRTS"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<c8"): 3,
    np.dtype("<c16"): 4,
    np.dtype("u1"): 5,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ContainerError(ValueError):
    """Malformed container file."""


def save_arrays(path, arrays: Dict[str, np.ndarray]):
    """Write named arrays; bool arrays are stored as u8."""
    names = list(arrays)
    if len(set(names)) != len(names):
        raise ContainerError("entry names must be unique")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype == np.bool_:
                arr = arr.astype(np.uint8)
            dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" \
                else arr.dtype
            arr = np.ascontiguousarray(arr, dtype=dt)
            if arr.dtype not in _DTYPE_CODES:
                raise ContainerError(
                    f"unsupported dtype {arr.dtype} for entry {name!r}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_arrays(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()

    def need(offset, n, what):
        if offset + n > len(data):
            raise ContainerError(
                f"truncated container: {what} at offset {offset}")
        return data[offset:offset + n], offset + n

    raw, off = need(0, 4, "magic")
    if raw != MAGIC:
        raise ContainerError(f"bad magic {raw!r} at offset 0")
    raw, off = need(off, 6, "header")
    version, count = struct.unpack("<HI", raw)
    if version != VERSION:
        raise ContainerError(f"unsupported version {version} at offset 4")

    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        raw, off = need(off, 2, "name length")
        (nlen,) = struct.unpack("<H", raw)
        raw, off = need(off, nlen, "name")
        name = raw.decode("utf-8")
        if name in out:
            raise ContainerError(f"duplicate entry {name!r} at offset {off}")
        raw, off = need(off, 2, "dtype/ndim")
        code, ndim = struct.unpack("<BB", raw)
        if code not in _CODE_DTYPES:
            raise ContainerError(f"unknown dtype code {code} at offset {off - 2}")
        raw, off = need(off, 8 * ndim, "dims")
        dims = struct.unpack(f"<{ndim}Q", raw)
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw, off = need(off, nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    if off != len(data):
        raise ContainerError(f"trailing bytes at offset {off}")
    return out


# -- session persistence ----------------------------------------------------

def save_session(path, ds):
    """Serialize a SessionDataset to one container."""
    from .sim import SessionDataset  # local import to avoid cycles
    assert isinstance(ds, SessionDataset)
    p = ds.params
    arrays: Dict[str, np.ndarray] = {
        "params/scalars": np.array(
            [p.tr_ms, p.fa1_deg, p.fa2_deg, p.b0_t, p.gamma_rad_per_s_t,
             p.alpha_ppm_per_degc, p.matrix[0], p.matrix[1], p.n_keep,
             p.noise_snr, p.afi_tr1_ms, p.afi_tr2_ms, p.afi_fa_deg,
             float(ds.seed)], dtype=np.float64),
        "params/te_ms": np.array(p.te_ms, dtype=np.float64),
        "mask/keep": ds.mask.keep.astype(np.uint8),
        "b1/s1": ds.b1_pair[0].astype(np.complex128),
        "b1/s2": ds.b1_pair[1].astype(np.complex128),
    }
    for fa_idx in (1, 2):
        for l, k in enumerate(ds.pretreat_full_k[fa_idx]):
            arrays[f"pretreat/fa{fa_idx}/te{l}"] = k.astype(np.complex128)
    for t in range(ds.n_dynamics):
        for l in range(ds.n_echoes):
            arrays[f"treat/t{t:04d}/te{l}"] = ds.treat_k[t][l].astype(np.complex128)
            arrays[f"treat_full/t{t:04d}/te{l}"] = \
                ds.treat_full_k[t][l].astype(np.complex128)
        arrays[f"gt/dt/t{t:04d}"] = np.asarray(ds.ground_truth_dt[t],
                                               dtype=np.float64)
        arrays[f"gt/t1/t{t:04d}"] = np.asarray(ds.ground_truth_t1[t],
                                               dtype=np.float64)
    save_arrays(path, arrays)


def load_session(path):
    from .kspace import SamplingMask
    from .sim import AcquisitionParams, SessionDataset

    a = load_arrays(path)
    s = a["params/scalars"]
    params = AcquisitionParams(
        tr_ms=s[0], te_ms=tuple(a["params/te_ms"]), fa1_deg=s[1], fa2_deg=s[2],
        b0_t=s[3], gamma_rad_per_s_t=s[4], alpha_ppm_per_degc=s[5],
        matrix=(int(s[6]), int(s[7])), n_keep=int(s[8]), noise_snr=s[9],
        afi_tr1_ms=s[10], afi_tr2_ms=s[11], afi_fa_deg=s[12])
    n_echo = len(params.te_ms)
    pretreat = {fa: [a[f"pretreat/fa{fa}/te{l}"] for l in range(n_echo)]
                for fa in (1, 2)}
    n_dyn = sum(1 for k in a if k.startswith("gt/dt/"))
    treat_k, treat_full_k, gt_dt, gt_t1 = [], [], [], []
    for t in range(n_dyn):
        treat_k.append([a[f"treat/t{t:04d}/te{l}"] for l in range(n_echo)])
        treat_full_k.append([a[f"treat_full/t{t:04d}/te{l}"]
                             for l in range(n_echo)])
        gt_dt.append(a[f"gt/dt/t{t:04d}"])
        gt_t1.append(a[f"gt/t1/t{t:04d}"])
    return SessionDataset(
        params=params, pretreat_full_k=pretreat,
        b1_pair=(a["b1/s1"], a["b1/s2"]), treat_k=treat_k,
        treat_full_k=treat_full_k, ground_truth_dt=gt_dt, ground_truth_t1=gt_t1,
        mask=SamplingMask(a["mask/keep"].astype(bool)), seed=int(s[13]))


# -- network checkpoint persistence ------------------------------------------

def save_weights(path, net):
    """Checkpoint a UNet: spec header plus named tensors and step counter."""
    arrays = {"net/spec": np.array(
        [net.spec.in_channels, net.spec.out_channels, net.spec.base_channels,
         net.spec.depth, net.spec.kernel[0], net.spec.kernel[1]],
        dtype=np.float64)}
    for name, arr in net.state_dict().items():
        arrays[f"net/state/{name}"] = np.asarray(arr, dtype=np.float64)
    save_arrays(path, arrays)


def load_weights(path):
    from .nn.unet import UNet, UNetSpec

    a = load_arrays(path)
    if "net/spec" not in a:
        raise ContainerError("not a checkpoint container: missing net/spec")
    s = a["net/spec"].astype(int)
    spec = UNetSpec(in_channels=int(s[0]), out_channels=int(s[1]),
                    base_channels=int(s[2]), depth=int(s[3]),
                    kernel=(int(s[4]), int(s[5])))
    net = UNet(spec)
    prefix = "net/state/"
    state = {k[len(prefix):]: v for k, v in a.items() if k.startswith(prefix)}
    net.load_state_dict(state)
    return net
