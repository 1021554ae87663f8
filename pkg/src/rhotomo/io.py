"""On-disk formats: text header plus raw little-endian float32 payload.

A header is a file of ``key: value`` lines; its payload lives next to it under
the name given by ``data_file``. Floats are written with ``repr`` so a
write/read cycle is exact for float32 data.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .field import FieldConfig, FieldModel
from .geometry import ScanGeometry
from .projector import ProjectionSet
from .volume import Volume

__all__ = [
    "VOLUME_MAGIC",
    "PROJECTION_MAGIC",
    "CHECKPOINT_MAGIC",
    "write_volume",
    "read_volume",
    "write_projections",
    "read_projections",
    "write_checkpoint",
    "read_checkpoint",
    "write_csv",
    "write_pgm",
]

VOLUME_MAGIC = "RHOTOMO-VOL 1"
PROJECTION_MAGIC = "RHOTOMO-PRJ 1"
CHECKPOINT_MAGIC = "RHOTOMO-CKPT 1"

_F32 = np.dtype("<f4")


def _fmt(x) -> str:
    if isinstance(x, (list, tuple, np.ndarray)):
        return " ".join(_fmt(v) for v in x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _payload_path(header: Path) -> Path:
    return header.with_suffix(".raw")


def _write(header: Path, lines: list[tuple[str, object]], payload: np.ndarray) -> None:
    header = Path(header)
    raw = _payload_path(header)
    if raw == header:
        raise ValidationError("header path must not end in .raw")
    header.parent.mkdir(parents=True, exist_ok=True)
    lines = lines + [("byte_order", "little-endian"), ("dtype", "f32"), ("data_file", raw.name)]
    text = "".join(f"{k}: {_fmt(v)}\n" for k, v in lines)
    with open(header, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    np.ascontiguousarray(payload, dtype=_F32).tofile(raw)


def _read(header: Path, magic: str):
    header = Path(header)
    if not header.is_file():
        raise ValidationError(f"no such file: {header}")
    fields: dict[str, list[str]] = {}
    with open(header, encoding="ascii") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise ValidationError(f"{header}: malformed header line {line!r}")
            fields.setdefault(key.strip(), []).append(value.strip())
    if fields.get("magic", [None])[0] != magic:
        raise ValidationError(f"{header}: expected magic {magic!r}")
    if fields.get("byte_order", [""])[0] != "little-endian" or fields.get("dtype", [""])[0] != "f32":
        raise ValidationError(f"{header}: only little-endian f32 payloads are supported")
    raw = header.parent / fields["data_file"][0]
    if not raw.is_file():
        raise ValidationError(f"missing payload {raw}")
    payload = np.fromfile(raw, dtype=_F32).astype(np.float32)
    return {k: v[0] for k, v in fields.items()}, fields, payload


def _floats(s):
    return tuple(float(x) for x in s.split())


def _ints(s):
    return tuple(int(x) for x in s.split())


# ------------------------------------------------------------------ volumes

def write_volume(path, vol: Volume) -> None:
    data = np.asarray(vol.data, dtype=np.float32)
    lines = [
        ("magic", VOLUME_MAGIC),
        ("dims", list(vol.dims)),
        ("spacing", list(vol.spacing)),
        ("origin", list(vol.origin)),
        ("value_min", float(data.min())),
        ("value_max", float(data.max())),
    ]
    # x-fastest ordering
    _write(path, lines, data.ravel(order="F"))


def read_volume(path) -> Volume:
    h, _, payload = _read(path, VOLUME_MAGIC)
    dims = _ints(h["dims"])
    if payload.size != int(np.prod(dims)):
        raise ValidationError(f"{path}: payload size {payload.size} does not match dims {dims}")
    data = np.ascontiguousarray(payload.reshape(dims, order="F"))
    return Volume(data, _floats(h["spacing"]), np.array(_floats(h["origin"])))


# -------------------------------------------------------------- projections

def _geometry_lines(geom: ScanGeometry, angles=True):
    lines = [
        ("det_rows", geom.det_rows),
        ("det_cols", geom.det_cols),
        ("det_spacing_u", geom.det_spacing_u),
        ("det_spacing_v", geom.det_spacing_v),
        ("dso", geom.dso),
        ("dsd", geom.dsd),
        ("vol_dims", list(geom.vol_dims)),
        ("vol_spacing", list(geom.vol_spacing)),
    ]
    if angles:
        lines.append(("angles", list(geom.angles)))
    return lines


def _geometry_from(h, angles) -> ScanGeometry:
    return ScanGeometry(
        dso=float(h["dso"]), dsd=float(h["dsd"]),
        det_rows=int(h["det_rows"]), det_cols=int(h["det_cols"]),
        det_spacing_u=float(h["det_spacing_u"]), det_spacing_v=float(h["det_spacing_v"]),
        vol_dims=_ints(h["vol_dims"]), vol_spacing=_floats(h["vol_spacing"]), angles=angles,
    )


def write_projections(path, proj: ProjectionSet) -> None:
    geom = proj.geom
    lines = [("magic", PROJECTION_MAGIC), ("views", geom.n_views)] + _geometry_lines(geom)
    # view-major, row-major within a view
    _write(path, lines, np.asarray(proj.images).reshape(-1))


def read_projections(path) -> ProjectionSet:
    h, _, payload = _read(path, PROJECTION_MAGIC)
    angles = _floats(h.get("angles", ""))
    if len(angles) != int(h["views"]):
        raise ValidationError(f"{path}: {h['views']} views but {len(angles)} angles")
    geom = _geometry_from(h, angles)
    shape = (geom.n_views, geom.det_rows, geom.det_cols)
    if payload.size != int(np.prod(shape)):
        raise ValidationError(f"{path}: payload size {payload.size} does not match {shape}")
    return ProjectionSet(geom, payload.reshape(shape))


# -------------------------------------------------------------- checkpoints

def write_checkpoint(path, model: FieldModel, geom: ScanGeometry, meta: dict | None = None) -> None:
    """Field parameters with a name/shape/offset manifest and the scan setup."""
    lines = [("magic", CHECKPOINT_MAGIC)]
    for k, v in vars(model.config).items():
        lines.append((f"field.{k}", v))
    lines += [(f"geometry.{k}", v) for k, v in _geometry_lines(geom, angles=False)]
    for k, v in (meta or {}).items():
        lines.append((f"meta.{k}", v))
    total = 0
    for name, shape, offset in model.layout():
        lines.append(("param", f"{name} {','.join(map(str, shape))} {offset}"))
        total += int(np.prod(shape))
    lines.append(("param_count", total))
    _write(path, lines, model.flat())


def read_checkpoint(path):
    """Returns ``(model, geometry_without_angles, meta)``."""
    h, multi, payload = _read(path, CHECKPOINT_MAGIC)
    kwargs = {}
    for field_name, default in vars(FieldConfig()).items():
        key = f"field.{field_name}"
        if key not in h:
            raise ValidationError(f"{path}: missing {key}")
        kwargs[field_name] = type(default)(h[key]) if not isinstance(default, bool) else h[key] == "True"
    config = FieldConfig(**kwargs)
    geom = _geometry_from({k[len("geometry."):]: v for k, v in h.items() if k.startswith("geometry.")}, [0.0])
    params = {}
    for entry in multi.get("param", []):
        name, shape_s, offset_s = entry.split()
        shape = tuple(int(s) for s in shape_s.split(","))
        offset = int(offset_s)
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise ValidationError(f"{path}: parameter {name} exceeds payload")
        params[name] = payload[offset:offset + size].reshape(shape).astype(np.dtype(config.dtype))
    if int(h.get("param_count", -1)) != payload.size:
        raise ValidationError(f"{path}: payload size does not match manifest")
    meta = {k[len("meta."):]: v for k, v in h.items() if k.startswith("meta.")}
    return FieldModel(config, params), geom, meta


# ---------------------------------------------------------------- CSV, PGM

def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_value(v) for v in row])


def write_pgm(path, image, vmin=None, vmax=None) -> None:
    """8-bit binary PGM of a 2-D array, linearly windowed to ``[vmin, vmax]``."""
    img = np.asarray(image, float)
    lo = img.min() if vmin is None else vmin
    hi = img.max() if vmax is None else vmax
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = np.clip(np.rint((img - lo) * scale), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pix.shape[1]} {pix.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
