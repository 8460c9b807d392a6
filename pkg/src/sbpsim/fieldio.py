"""Binary field snapshots and run checkpoints.

Field snapshot layout (all integers and floats little-endian):

    offset  size  content
    0       8     magic b"SBPFLD01"
    8       4     uint32  dim
    12      4     uint32  n (points per axis)
    16      8     float64 box length L
    24      4     uint32  space tag: 0 physical, 1 frequency
    28      4     uint32  bytes per component: 8 (float64) or 4 (float32)
    32      8     float64 time stamp
    40      --    n^dim samples in row-major (C) order, each stored as a
                  (real, imag) component pair

Checkpoints embed a config echo, the scalar state, one field snapshot and
the raw phase-integral accumulator:

    0       8     magic b"SBPCKPT1"
    8       4     uint32  config text length B
    12      B     config echo, UTF-8 flat key=value lines
    --      8*5   float64 t, uint64 step_count, float64 theta_t,
                  float64 mass0, float64 energy0
    --      --    field snapshot block (format above, float64 components)
    --      --    n^dim float64: accumulated phase integral, row-major

Component width 8 is the default everywhere; width 4 exists for compact
cross-tool export and is not accepted for checkpoints (restart must be
bit-exact).
"""

import io
import struct

import numpy as np

from .grid import FREQUENCY, PHYSICAL, ComplexField, make_grid

FIELD_MAGIC = b"SBPFLD01"
CKPT_MAGIC = b"SBPCKPT1"
_TAGS = {PHYSICAL: 0, FREQUENCY: 1}
_TAG_NAMES = {v: k for k, v in _TAGS.items()}


def write_field(fh_or_path, field, time=0.0, component_bytes=8):
    """Write one field snapshot; see the module docstring for the layout."""
    if component_bytes not in (4, 8):
        raise ValueError("component width must be 4 or 8 bytes")
    own = isinstance(fh_or_path, (str, bytes)) or hasattr(fh_or_path, "__fspath__")
    fh = open(fh_or_path, "wb") if own else fh_or_path
    try:
        g = field.grid
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<IId", g.dim, g.n, g.length))
        fh.write(struct.pack("<IId", _TAGS[field.space_tag], component_bytes, time))
        dtype = "<c16" if component_bytes == 8 else "<c8"
        fh.write(np.ascontiguousarray(field.values).astype(dtype).tobytes())
    finally:
        if own:
            fh.close()


def read_field(fh_or_path):
    """Read a field snapshot; returns (ComplexField) with .time attached."""
    own = isinstance(fh_or_path, (str, bytes)) or hasattr(fh_or_path, "__fspath__")
    fh = open(fh_or_path, "rb") if own else fh_or_path
    try:
        magic = fh.read(8)
        if magic != FIELD_MAGIC:
            raise ValueError(f"not a field snapshot (magic {magic!r})")
        dim, n, length = struct.unpack("<IId", fh.read(16))
        tag_code, width, time = struct.unpack("<IId", fh.read(16))
        grid = make_grid(dim, n, length)
        count = n**dim
        dtype = np.dtype("<c16") if width == 8 else np.dtype("<c8")
        raw = fh.read(count * dtype.itemsize)
        values = np.frombuffer(raw, dtype=dtype).astype(np.complex128)
        field = ComplexField(grid, values.reshape(grid.shape), _TAG_NAMES[tag_code])
        field.time = time
        return field
    finally:
        if own:
            fh.close()


def write_checkpoint(path, config, state):
    """Persist a run state for bit-exact restart."""
    from .config import serialize_config

    text = serialize_config(config).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(
            struct.pack(
                "<dQddd",
                state.t,
                state.step_count,
                state.theta_t,
                state.mass0,
                state.energy0,
            )
        )
        write_field(fh, state.u, time=state.t, component_bytes=8)
        fh.write(np.ascontiguousarray(state.theta, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Load (config, SimState) from a checkpoint file."""
    from .config import parse_config_text
    from .dynamics import SimState

    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint (magic {magic!r})")
        (text_len,) = struct.unpack("<I", fh.read(4))
        config = parse_config_text(fh.read(text_len).decode("utf-8"))
        t, step_count, theta_t, mass0, energy0 = struct.unpack("<dQddd", fh.read(40))
        u = read_field(fh)
        count = u.grid.n ** u.grid.dim
        theta = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(u.grid.shape)
    state = SimState(
        u=u,
        t=t,
        step_count=int(step_count),
        theta=theta.copy(),
        theta_t=theta_t,
        mass0=mass0,
        energy0=energy0,
    )
    return config, state
