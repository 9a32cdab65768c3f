"""File formats: netpbm images, PFM, band-sequential cubes, PLY, rig configs, corner tables, scene specs.

Every writer goes through a temporary file that is renamed into place.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .calibration import BoardSpec, CalibrationView
from .camera import ROI, CameraModel, CameraRig, RigConfig
from .errors import ConfigError, FormatError
from .geometry import Distortion, Intrinsics, RigidTransform
from .mesh import DepthMap, TriangleMesh

# ---------------------------------------------------------------------------
# atomic writes


def _umask() -> int:
    m = os.umask(0)
    os.umask(m)
    return m


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# netpbm


def _pnm_header(data: bytes, n_fields: int):
    """Parse whitespace-separated header tokens (skipping comments); return tokens and data offset."""
    tokens = []
    i = 0
    while len(tokens) < n_fields:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if i >= len(data):
            raise FormatError("truncated header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        tokens.append(data[i:j].decode("ascii"))
        i = j
    return tokens, i + 1  # exactly one whitespace byte before the raster


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"netpbm images must be uint8 or uint16, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"netpbm images must be (H, W) or (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    maxval = 255 if img.dtype == np.uint8 else 65535
    raster = img.astype(">u2").tobytes() if img.dtype == np.uint16 else img.tobytes()
    return magic + f"\n{w} {h}\n{maxval}\n".encode() + raster


def decode_pnm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{name}: not a binary PGM/PPM file")
    try:
        (w, h, maxval), off = _pnm_header(data[2:], 3)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as e:
        raise FormatError(f"{name}: bad header ({e})") from None
    ch = 1 if magic == b"P5" else 3
    if not (0 < maxval < 65536):
        raise FormatError(f"{name}: invalid maxval {maxval}")
    dt = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    n = w * h * ch
    raster = data[2 + off:]
    if len(raster) < n * dt.itemsize:
        raise FormatError(f"{name}: raster truncated")
    a = np.frombuffer(raster, dtype=dt, count=n)
    a = a.astype(np.uint8 if dt.itemsize == 1 else np.uint16)
    return a.reshape((h, w) if ch == 1 else (h, w, 3))


# ---------------------------------------------------------------------------
# PFM


def encode_pfm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        magic = "Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = "PF"
    else:
        raise ValueError(f"PFM images must be (H, W) or (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    # negative scale marks little-endian; rows run bottom to top
    return f"{magic}\n{w} {h}\n-1\n".encode() + np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()


def decode_pfm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    magic = data[:2]
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"{name}: not a PFM file")
    try:
        (w, h, scale), off = _pnm_header(data[2:], 3)
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as e:
        raise FormatError(f"{name}: bad header ({e})") from None
    ch = 1 if magic == b"Pf" else 3
    dt = "<f4" if scale < 0 else ">f4"
    n = w * h * ch
    raster = data[2 + off:]
    if len(raster) < 4 * n:
        raise FormatError(f"{name}: raster truncated")
    a = np.frombuffer(raster, dtype=dt, count=n).astype(np.float32)
    a = a.reshape((h, w) if ch == 1 else (h, w, 3))
    return np.ascontiguousarray(a[::-1])


# ---------------------------------------------------------------------------
# band-sequential cubes


def write_bsq(path, cube: np.ndarray, wavelengths=None) -> None:
    """``path`` names the raw ``.bsq`` file; the header goes next to it with suffix ``.hdr``."""
    cube = np.asarray(cube, dtype=np.float32)
    if cube.ndim == 2:
        cube = cube[..., None]
    h, w, k = cube.shape
    wl = list(range(k)) if wavelengths is None else list(wavelengths)
    if len(wl) != k:
        raise ValueError("one wavelength per band required")
    path = Path(path)
    hdr = (
        f"width {w}\nheight {h}\nbands {k}\ninterleave bsq\ndatatype float32\nbyte_order little\n"
        f"wavelengths {' '.join(repr(float(x)) for x in wl)}\n"
    )
    atomic_write(path, np.ascontiguousarray(np.moveaxis(cube, 2, 0)).astype("<f4").tobytes())
    atomic_write_text(path.with_suffix(".hdr"), hdr)


def read_bsq(path) -> tuple[np.ndarray, list]:
    path = Path(path)
    hdr_path = path.with_suffix(".hdr")
    fields = {}
    for ln, line in enumerate(hdr_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, _, val = line.strip().partition(" ")
        fields[key] = val
    try:
        w, h, k = int(fields["width"]), int(fields["height"]), int(fields["bands"])
        wl = [float(x) for x in fields.get("wavelengths", "").split()]
    except (KeyError, ValueError) as e:
        raise FormatError(f"{hdr_path}: bad header ({e})") from None
    if fields.get("datatype", "float32") != "float32" or fields.get("interleave", "bsq") != "bsq":
        raise FormatError(f"{hdr_path}: only float32 band-sequential cubes are supported")
    raw = path.read_bytes()
    if len(raw) != 4 * w * h * k:
        raise FormatError(f"{path}: expected {4 * w * h * k} bytes, found {len(raw)}")
    cube = np.frombuffer(raw, "<f4").astype(np.float32).reshape(k, h, w)
    return np.ascontiguousarray(np.moveaxis(cube, 0, 2)), wl


# ---------------------------------------------------------------------------
# generic image dispatch


def read_image(path) -> np.ndarray:
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".pgm", ".ppm"):
        return decode_pnm(path.read_bytes(), str(path))
    if ext == ".pfm":
        return decode_pfm(path.read_bytes(), str(path))
    if ext == ".bsq":
        return read_bsq(path)[0]
    raise FormatError(f"{path}: unsupported image type {ext!r}")


def write_image(path, img: np.ndarray, wavelengths=None) -> None:
    path = Path(path)
    ext = path.suffix.lower()
    if ext in (".pgm", ".ppm"):
        atomic_write(path, encode_pnm(img))
    elif ext == ".pfm":
        atomic_write(path, encode_pfm(img))
    elif ext == ".bsq":
        write_bsq(path, img, wavelengths)
    else:
        raise FormatError(f"{path}: unsupported image type {ext!r}")


def image_suffix(img: np.ndarray) -> str:
    """Natural file suffix for an image array."""
    img = np.asarray(img)
    k = 1 if img.ndim == 2 else img.shape[2]
    if np.issubdtype(img.dtype, np.integer):
        return ".pgm" if k == 1 else ".ppm"
    return ".pfm" if k in (1, 3) else ".bsq"


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write(path, encode_pnm(np.asarray(mask, dtype=np.uint8)))


# ---------------------------------------------------------------------------
# depth maps


def write_depth(path, depth: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Depth in meters; ``.pgm`` stores 16-bit millimeters, ``.pfm`` float meters (0 marks invalid)."""
    d = np.asarray(depth, dtype=float)
    ok = np.isfinite(d) & (d > 0)
    if valid is not None:
        ok &= valid
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        mm = np.where(ok, np.clip(np.rint(d * 1000.0), 0, 65535), 0).astype(np.uint16)
        atomic_write(path, encode_pnm(mm))
    elif path.suffix.lower() == ".pfm":
        atomic_write(path, encode_pfm(np.where(ok, d, 0.0)))
    else:
        raise FormatError(f"{path}: depth maps must be .pgm or .pfm")


def read_depth(path, intrinsics: Intrinsics, distortion: Distortion | None = None) -> DepthMap:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".pgm":
        raw = decode_pnm(path.read_bytes(), str(path))
        if raw.ndim != 2:
            raise FormatError(f"{path}: depth PGM must be single channel")
        d = raw.astype(float) / 1000.0
    elif ext == ".pfm":
        raw = decode_pfm(path.read_bytes(), str(path))
        if raw.ndim != 2:
            raise FormatError(f"{path}: depth PFM must be single channel")
        d = raw.astype(float)
    else:
        raise FormatError(f"{path}: depth maps must be .pgm or .pfm")
    if d.shape != (intrinsics.height, intrinsics.width):
        raise FormatError(
            f"{path}: depth map is {d.shape[1]}x{d.shape[0]}, camera expects {intrinsics.width}x{intrinsics.height}"
        )
    return DepthMap(d, intrinsics, None, distortion or Distortion())


# ---------------------------------------------------------------------------
# PLY


def _f32_text(a: np.ndarray) -> list:
    return [str(x) for x in np.asarray(a, dtype=np.float32)]


def write_ply(path, columns: list, binary: bool = True, faces: np.ndarray | None = None) -> None:
    """``columns`` is a list of ``(name, array, ply_type)`` with ply_type ``float`` or ``uchar``."""
    n = len(columns[0][1]) if columns else 0
    for name, arr, typ in columns:
        if len(arr) != n:
            raise ValueError(f"column {name} has {len(arr)} rows, expected {n}")
        if typ not in ("float", "uchar"):
            raise ValueError(f"unsupported PLY type {typ}")
    fmt = "binary_little_endian" if binary else "ascii"
    head = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    head += [f"property {typ} {name}" for name, _, typ in columns]
    if faces is not None:
        head += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")
    if binary:
        dt = np.dtype([(name, "<f4" if typ == "float" else "u1") for name, _, typ in columns])
        rec = np.empty(n, dtype=dt)
        for name, arr, _ in columns:
            rec[name] = arr
        body = rec.tobytes()
        if faces is not None:
            fd = np.dtype([("k", "u1"), ("i", "<i4", (3,))])
            fr = np.empty(len(faces), dtype=fd)
            fr["k"] = 3
            fr["i"] = faces
            body += fr.tobytes()
    else:
        cols = [_f32_text(arr) if typ == "float" else [str(int(x)) for x in arr] for _, arr, typ in columns]
        lines = [" ".join(row) for row in zip(*cols)] if cols else []
        if faces is not None:
            lines += [f"3 {a} {b} {c}" for a, b, c in np.asarray(faces, dtype=np.int64)]
        body = ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")
    atomic_write(path, header + body)


def read_ply(path) -> dict:
    """Vertex properties of a PLY file as ``{name: array}`` (float32 / uint8), plus ``faces`` if present."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt = None
    props = []
    n_vert = n_face = 0
    element = None
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            element = tok[1]
            if element == "vertex":
                n_vert = int(tok[2])
            elif element == "face":
                n_face = int(tok[2])
            else:
                raise FormatError(f"{path}: unsupported element {element}")
        elif tok[0] == "property" and element == "vertex":
            if tok[1] not in ("float", "uchar"):
                raise FormatError(f"{path}: unsupported property type {tok[1]}")
            props.append((tok[2], tok[1]))
    out = {}
    if fmt == "binary_little_endian":
        dt = np.dtype([(name, "<f4" if typ == "float" else "u1") for name, typ in props])
        if len(body) < dt.itemsize * n_vert:
            raise FormatError(f"{path}: vertex data truncated (header declares {n_vert})")
        rec = np.frombuffer(body, dtype=dt, count=n_vert)
        for name, typ in props:
            out[name] = rec[name].astype(np.float32 if typ == "float" else np.uint8)
        rest = body[dt.itemsize * n_vert:]
        if n_face:
            fd = np.dtype([("k", "u1"), ("i", "<i4", (3,))])
            out["faces"] = np.frombuffer(rest, dtype=fd, count=n_face)["i"].astype(np.int64)
    elif fmt == "ascii":
        lines = body.decode("ascii").splitlines()
        if len(lines) < n_vert + n_face:
            raise FormatError(f"{path}: expected {n_vert} vertices, found {len(lines)} lines")
        rows = [ln.split() for ln in lines[:n_vert]]
        for j, (name, typ) in enumerate(props):
            col = [r[j] for r in rows]
            out[name] = np.array(col, dtype=np.float32 if typ == "float" else np.uint8)
        if n_face:
            out["faces"] = np.array([ln.split()[1:4] for ln in lines[n_vert:n_vert + n_face]], dtype=np.int64)
    else:
        raise FormatError(f"{path}: unsupported PLY format {fmt}")
    return out


def point_cloud_columns(cloud) -> list:
    cols = [("x", cloud.points[:, 0], "float"), ("y", cloud.points[:, 1], "float"), ("z", cloud.points[:, 2], "float")]
    for cid in sorted(cloud.values):
        v = cloud.values[cid]
        for k in range(v.shape[1]):
            cols.append((f"{cid}_{k}", v[:, k], "float"))
    for cid in sorted(cloud.cases):
        cols.append((f"case_{cid}", cloud.cases[cid], "uchar"))
    return cols


def write_point_cloud(path, cloud, binary: bool = True) -> None:
    write_ply(path, point_cloud_columns(cloud), binary)


def write_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    V = mesh.vertices
    write_ply(path, [("x", V[:, 0], "float"), ("y", V[:, 1], "float"), ("z", V[:, 2], "float")], binary,
              faces=mesh.triangles)


# ---------------------------------------------------------------------------
# rig configuration

_CAMERA_KEYS = {"id", "modality", "width", "height", "fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2",
                "rotation", "translation"}
_ROI_KEYS = {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max"}
_TOP_KEYS = {"depth_camera_id", "roi", "ground_z", "angle_threshold_deg", "cameras"}


def _check_keys(d: dict, allowed: set, where: str, required: set | None = None):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")
    missing = (allowed if required is None else required) - set(d)
    if missing:
        raise ConfigError(f"missing key(s) in {where}: {', '.join(sorted(missing))}")


def camera_to_dict(cam: CameraModel) -> dict:
    i, d, T = cam.intrinsics, cam.distortion, cam.from_depth
    return {
        "id": cam.id, "modality": cam.modality, "width": i.width, "height": i.height,
        "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
        "k1": d.k1, "k2": d.k2, "k3": d.k3, "p1": d.p1, "p2": d.p2,
        "rotation": [float(x) for x in T.R.ravel()], "translation": [float(x) for x in T.t],
    }


def rig_config_to_dict(cfg: RigConfig) -> dict:
    r = cfg.roi
    return {
        "depth_camera_id": cfg.rig.depth_camera_id,
        "roi": {k: getattr(r, k) for k in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")},
        "ground_z": cfg.ground,
        "angle_threshold_deg": cfg.angle_threshold_deg,
        "cameras": [camera_to_dict(cfg.rig[c]) for c in cfg.rig.ids],
    }


def rig_config_from_dict(doc: dict) -> RigConfig:
    _check_keys(doc, _TOP_KEYS, "rig config", {"depth_camera_id", "roi", "cameras"})
    _check_keys(doc["roi"], _ROI_KEYS, "roi")
    try:
        roi = ROI(**{k: float(v) for k, v in doc["roi"].items()})
        depth_id = str(doc["depth_camera_id"])
        cams = {}
        for j, c in enumerate(doc["cameras"]):
            _check_keys(c, _CAMERA_KEYS, f"camera {j}", _CAMERA_KEYS - {"modality", "k1", "k2", "k3", "p1", "p2"})
            cid = str(c["id"])
            if cid in cams:
                raise ConfigError(f"duplicate camera id {cid!r}")
            intr = Intrinsics(float(c["fx"]), float(c["fy"]), float(c["cx"]), float(c["cy"]),
                              int(c["width"]), int(c["height"]))
            dist = Distortion(*(float(c.get(k, 0.0)) for k in ("k1", "k2", "k3", "p1", "p2")))
            dist.check_invertible()
            R = np.array(c["rotation"], dtype=float)
            t = np.array(c["translation"], dtype=float)
            if R.size != 9 or t.size != 3:
                raise ConfigError(f"camera {cid!r}: rotation needs 9 and translation 3 numbers")
            T = RigidTransform(R.reshape(3, 3), t, depth_id, cid)
            cams[cid] = CameraModel(cid, intr, dist, T, str(c.get("modality", "")))
        rig = CameraRig(cams, depth_id)
    except (TypeError, ValueError, ArithmeticError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    ground = doc.get("ground_z")
    return RigConfig(rig, roi, None if ground is None else float(ground), float(doc.get("angle_threshold_deg", 15.0)))


def write_rig_config(path, cfg: RigConfig) -> None:
    atomic_write_text(path, json.dumps(rig_config_to_dict(cfg), indent=2) + "\n")


def read_rig_config(path) -> RigConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return rig_config_from_dict(doc)


# ---------------------------------------------------------------------------
# corner tables

CORNER_HEADER = "view_id camera_id row col u v"


def write_corners(path, board: BoardSpec, views, cameras: dict | None = None) -> None:
    """``cameras`` optionally maps camera id -> ``(width, height, modality)``."""
    lines = [f"board {board.rows} {board.cols} {board.square!r}"]
    for cid, (w, h, mod) in sorted((cameras or {}).items()):
        lines.append(f"camera {cid} {w} {h} {mod}".rstrip())
    lines.append(CORNER_HEADER)
    for v in views:
        ids = v.corner_ids
        if ids is None:
            raise ValueError("views written to corner files need board corner ids")
        for (r, c), (u, vv) in zip(ids, v.image_points):
            lines.append(f"{v.view_id} {v.camera_id} {int(r)} {int(c)} {float(u)!r} {float(vv)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_corners(paths, board: BoardSpec | None = None):
    """Parse one or more corner files into ``(board, views, cameras)``."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    rows: dict = {}
    cameras: dict = {}
    for path in paths:
        header_seen = False
        for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()

            def bad(msg):
                return FormatError(f"{path}:{ln}: {msg}")

            if tok[0] == "board":
                if len(tok) != 4:
                    raise bad("board line needs rows cols square")
                try:
                    b = BoardSpec(int(tok[1]), int(tok[2]), float(tok[3]))
                except ValueError as e:
                    raise bad(str(e)) from None
                if board is not None and b != board:
                    raise bad(f"board {b.rows}x{b.cols}:{b.square} conflicts with {board.rows}x{board.cols}:{board.square}")
                board = b
                continue
            if tok[0] == "camera":
                if len(tok) not in (4, 5):
                    raise bad("camera line needs id width height [modality]")
                try:
                    cameras[tok[1]] = (int(tok[2]), int(tok[3]), tok[4] if len(tok) == 5 else "")
                except ValueError:
                    raise bad("camera size must be integers") from None
                continue
            if line == CORNER_HEADER:
                header_seen = True
                continue
            if not header_seen:
                raise bad("corner row before the column header")
            if len(tok) != 6:
                raise bad(f"expected 6 fields, found {len(tok)}")
            try:
                r, c = int(tok[2]), int(tok[3])
                u, v = float(tok[4]), float(tok[5])
            except ValueError:
                raise bad("malformed number") from None
            if board is None:
                raise bad("corner row before the board line")
            if not (0 <= r < board.rows and 0 <= c < board.cols):
                raise bad(f"corner ({r}, {c}) outside the {board.rows}x{board.cols} board")
            rows.setdefault((tok[1], tok[0]), []).append((r, c, u, v))
    if board is None:
        raise FormatError("no board line in corner files")
    views = []
    for (cid, vid), obs in sorted(rows.items()):
        a = np.array(obs)
        views.append(CalibrationView.from_grid(board, cid, vid, a[:, :2].astype(int), a[:, 2:]))
    return board, views, cameras


# ---------------------------------------------------------------------------
# scene specs


def _texture_from(d: dict):
    from .synthetic import Texture

    _check_keys(d, {"kind", "pitch", "values", "gradient"}, "texture", {"kind"})
    return Texture(d["kind"], float(d.get("pitch", 0.01)), tuple(d.get("values", (0.5, 0.5))),
                   tuple(d.get("gradient", (0.5, 0.0, 0.0))))


_SCENE_KEYS = {"ground_z", "roi", "primitives", "ground_texture", "depth_noise_sigma", "flying_pixels",
               "board", "board_poses", "corner_noise_sigma", "channels"}
_PRIM_KEYS = {"kind", "center", "u_axis", "v_axis", "half_size", "radius", "texture"}


def scene_from_dict(doc: dict):
    """Scene plus capture options: ``(SceneSpec, options dict)``."""
    from .synthetic import Primitive, SceneSpec, Texture

    _check_keys(doc, _SCENE_KEYS, "scene", {"primitives"})
    try:
        prims = []
        for j, p in enumerate(doc["primitives"]):
            _check_keys(p, _PRIM_KEYS, f"primitive {j}", {"kind", "center"})
            prims.append(Primitive(
                p["kind"], tuple(float(x) for x in p["center"]),
                tuple(p.get("u_axis", (1.0, 0.0, 0.0))), tuple(p.get("v_axis", (0.0, 1.0, 0.0))),
                tuple(p.get("half_size", (0.0, 0.0))), float(p.get("radius", 0.0)),
                _texture_from(p["texture"]) if "texture" in p else Texture(),
            ))
        roi = None
        if "roi" in doc:
            _check_keys(doc["roi"], _ROI_KEYS, "roi")
            roi = ROI(**{k: float(v) for k, v in doc["roi"].items()})
        kw = {}
        if "ground_texture" in doc:
            kw["ground_texture"] = _texture_from(doc["ground_texture"])
        scene = SceneSpec(tuple(prims), float(doc.get("ground_z", 1.2)), roi, **kw)
        board = None
        if "board" in doc:
            b = doc["board"]
            _check_keys(b, {"rows", "cols", "square"}, "board")
            board = BoardSpec(int(b["rows"]), int(b["cols"]), float(b["square"]))
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from None
    opts = {
        "depth_noise_sigma": float(doc.get("depth_noise_sigma", 0.0)),
        "flying_pixels": bool(doc.get("flying_pixels", False)),
        "board": board,
        "board_poses": int(doc.get("board_poses", 23)),
        "corner_noise_sigma": float(doc.get("corner_noise_sigma", 0.0)),
        "channels": {str(k): int(v) for k, v in doc.get("channels", {}).items()},
    }
    return scene, opts


def _texture_dict(t) -> dict:
    return {"kind": t.kind, "pitch": t.pitch, "values": list(t.values), "gradient": list(t.gradient)}


def scene_to_dict(scene, **opts) -> dict:
    doc = {
        "ground_z": scene.ground_z,
        "ground_texture": _texture_dict(scene.ground_texture),
        "primitives": [
            {"kind": p.kind, "center": list(p.center), "u_axis": list(p.u_axis), "v_axis": list(p.v_axis),
             "half_size": list(p.half_size), "radius": p.radius, "texture": _texture_dict(p.texture)}
            for p in scene.primitives
        ],
    }
    if scene.roi is not None:
        r = scene.roi
        doc["roi"] = {k: getattr(r, k) for k in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")}
    for k, v in opts.items():
        if k == "board" and v is not None:
            v = {"rows": v.rows, "cols": v.cols, "square": v.square}
        doc[k] = v
    return doc


def read_scene(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return scene_from_dict(doc)


def write_scene(path, scene, **opts) -> None:
    atomic_write_text(path, json.dumps(scene_to_dict(scene, **opts), indent=2) + "\n")


_VIEW_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


def depth_path_for_view(depth_dir, view_id: str) -> Path:
    """``<dir>/<view>.pfm``, else ``<dir>/<view>.pgm``; raises FileNotFoundError if neither exists."""
    if not _VIEW_ID.match(view_id):
        raise FormatError(f"invalid view id {view_id!r}")
    for ext in (".pfm", ".pgm"):
        p = Path(depth_dir) / f"{view_id}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no depth map for view {view_id!r} in {depth_dir}")
