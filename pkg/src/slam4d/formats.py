"""File formats: TUM trajectories, P6/P4/PFM images, datasets, run configs.

Trajectory interchange uses the TUM convention: one pose per line as
``timestamp tx ty tz qx qy qz qw``, '#' starting a comment line. Images use
binary portable formats (P6 pixmap for RGB, P4 bitmap for masks) and PFM for
float maps. Dense flow is stored as a 3-channel PFM whose channels are
(u, v, valid); depth uses single-channel PFM.
"""

import struct
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dyn_ba import BAConfig, Trajectory
from .errors import EmptyInputError, InvalidArgumentError, ParseError
from .field import FieldConfig
from .geometry import CameraIntrinsics, PoseSE3
from .motion_mask import FlowField, MaskConfig, MotionMask, SemanticMask
from .renderer import TrainConfig

QUAT_NORM_WARN_TOL = 1e-3


# ---------------------------------------------------------------------------
# TUM trajectory format


def write_tum_trajectory(traj: Trajectory, path) -> None:
    """Writes one `timestamp tx ty tz qx qy qz qw` line per pose."""
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for ts, pose in traj:
        vals = [ts, *pose.t, *pose.quat]
        # fixed 9 decimal places keeps the read-back error below 1e-9
        lines.append(" ".join(f"{v:.9f}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tum_trajectory(path) -> Trajectory:
    """Parses a TUM trajectory file.

    Malformed lines raise ParseError with the 1-based line number. Quaternions
    are renormalized; a deviation above 1e-3 from unit norm draws a warning.
    """
    timestamps = []
    poses = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(
                f"expected 8 fields, got {len(parts)}", line=lineno
            )
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"non-numeric field: {exc}", line=lineno) from exc
        ts, tx, ty, tz, qx, qy, qz, qw = vals
        q = np.array([qx, qy, qz, qw])
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ParseError("zero quaternion", line=lineno)
        if abs(norm - 1.0) > QUAT_NORM_WARN_TOL:
            warnings.warn(
                f"line {lineno}: quaternion norm {norm:.6f} deviates from 1; "
                "renormalizing"
            )
        timestamps.append(ts)
        poses.append(PoseSE3(q / norm, np.array([tx, ty, tz])))
    if not poses:
        raise EmptyInputError(f"no trajectory lines in {path}")
    return Trajectory(np.array(timestamps), tuple(poses))


# ---------------------------------------------------------------------------
# Binary portable image formats


def _read_pnm_header(data: bytes, magic: bytes, path):
    """Returns (tokens, payload offset) after the magic + header tokens.

    The header consists of whitespace-separated tokens (with '#' comments);
    P6 needs width, height, maxval; P4 needs width and height. Exactly one
    whitespace byte separates the header from the payload.
    """
    if not data.startswith(magic):
        raise ParseError(f"{path}: expected magic {magic!r}")
    want = 3 if magic == b"P6" else 2
    tokens = []
    pos = len(magic)
    while len(tokens) < want:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise ParseError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace separator before payload
    try:
        nums = [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"{path}: non-integer header field") from None
    return nums, pos


def write_p6(image: np.ndarray, path) -> None:
    """Writes an (H, W, 3) uint8 image as a binary pixmap."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise InvalidArgumentError("P6 needs an (H, W, 3) uint8 image")
    h, w = image.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.tobytes())


def read_p6(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h, maxval), pos = _read_pnm_header(data, b"P6", path)
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 supported, got {maxval}")
    payload = data[pos : pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise ParseError(f"{path}: truncated pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def write_p4(mask: np.ndarray, path) -> None:
    """Writes a boolean (H, W) mask as a binary bitmap; 1 bits mark dynamic."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidArgumentError("P4 needs an (H, W) boolean mask")
    h, w = mask.shape
    header = f"P4\n{w} {h}\n".encode("ascii")
    packed = np.packbits(mask, axis=1)
    Path(path).write_bytes(header + packed.tobytes())


def read_p4(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h), pos = _read_pnm_header(data, b"P4", path)
    row_bytes = (w + 7) // 8
    payload = data[pos : pos + row_bytes * h]
    if len(payload) != row_bytes * h:
        raise ParseError(f"{path}: truncated bitmap payload")
    rows = np.frombuffer(payload, dtype=np.uint8).reshape(h, row_bytes)
    bits = np.unpackbits(rows, axis=1)[:, :w]
    return bits.astype(bool)


def write_pfm(array: np.ndarray, path) -> None:
    """Writes a (H, W) or (H, W, 3) float32 map, little-endian, bottom-up."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim == 2:
        magic = b"Pf"
    elif array.ndim == 3 and array.shape[2] == 3:
        magic = b"PF"
    else:
        raise InvalidArgumentError("PFM needs (H, W) or (H, W, 3) data")
    h, w = array.shape[:2]
    header = magic + f"\n{w} {h}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(array[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data.startswith(b"PF"):
        channels = 3
    elif data.startswith(b"Pf"):
        channels = 1
    else:
        raise ParseError(f"{path}: expected PFM magic")
    lines = data.split(b"\n", 3)
    if len(lines) < 4:
        raise ParseError(f"{path}: truncated PFM header")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError:
        raise ParseError(f"{path}: malformed PFM header") from None
    if scale == 0:
        raise ParseError(f"{path}: zero scale")
    endian = "<" if scale < 0 else ">"
    count = w * h * channels
    payload = lines[3][: count * 4]
    if len(payload) != count * 4:
        raise ParseError(f"{path}: truncated PFM payload")
    arr = np.frombuffer(payload, dtype=endian + "f4").astype(np.float32)
    arr = arr.reshape((h, w) if channels == 1 else (h, w, 3))
    return arr[::-1].copy()


# ---------------------------------------------------------------------------
# Flow / mask wrappers


def write_flow(flow: FlowField, path) -> None:
    """Stores flow as a 3-channel PFM with channels (u, v, valid)."""
    h, w = flow.flow.shape[:2]
    packed = np.zeros((h, w, 3), dtype=np.float32)
    packed[..., :2] = flow.flow
    packed[..., 2] = flow.valid
    write_pfm(packed, path)


def read_flow(path) -> FlowField:
    packed = read_pfm(path)
    if packed.ndim != 3:
        raise ParseError(f"{path}: flow PFM must have 3 channels")
    return FlowField(packed[..., :2].astype(np.float64), packed[..., 2] > 0.5)


# ---------------------------------------------------------------------------
# Dataset layout


def write_intrinsics(K: CameraIntrinsics, path) -> None:
    Path(path).write_text(
        f"{K.fx:.9g} {K.fy:.9g} {K.cx:.9g} {K.cy:.9g} {K.width} {K.height}\n"
    )


def read_intrinsics(path) -> CameraIntrinsics:
    parts = Path(path).read_text().split()
    if len(parts) != 6:
        raise ParseError(f"{path}: expected 'fx fy cx cy W H'", line=1)
    try:
        fx, fy, cx, cy = (float(p) for p in parts[:4])
        w, h = (int(p) for p in parts[4:])
    except ValueError:
        raise ParseError(f"{path}: non-numeric intrinsics", line=1) from None
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=w, height=h)


def write_dataset(frames, intrinsics: CameraIntrinsics, out_dir) -> None:
    """Writes ground-truth frames in the on-disk dataset layout.

    Layout: poses_gt.txt (trajectory), rgb/NNNN.ppm, depth/NNNN.pfm,
    flow/NNNN.pfm (u, v, valid), mask/NNNN.pbm, intrinsics.txt, times.txt.
    The last frame has no successor, hence one fewer flow file than frames.
    """
    out = Path(out_dir)
    for sub in ("rgb", "depth", "flow", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    timestamps = [f.timestamp for f in frames]
    poses = [f.pose for f in frames]
    write_tum_trajectory(Trajectory(np.array(timestamps), tuple(poses)),
                         out / "poses_gt.txt")
    write_intrinsics(intrinsics, out / "intrinsics.txt")
    (out / "times.txt").write_text(
        "".join(f"{t:.9g}\n" for t in timestamps)
    )
    for i, frame in enumerate(frames):
        img8 = np.clip(np.round(frame.image * 255.0), 0, 255).astype(np.uint8)
        write_p6(img8, out / "rgb" / f"{i:04d}.ppm")
        write_pfm(frame.depth.astype(np.float32), out / "depth" / f"{i:04d}.pfm")
        write_p4(frame.motion_mask.grid, out / "mask" / f"{i:04d}.pbm")
        if frame.flow_to_next is not None:
            write_flow(frame.flow_to_next, out / "flow" / f"{i:04d}.pfm")


@dataclass
class Dataset:
    """In-memory view of the on-disk dataset layout."""

    intrinsics: CameraIntrinsics
    timestamps: list
    images: list        # (H, W, 3) float64 in [0, 1]
    depths: list        # (H, W) float64
    flows: list         # FlowField, one per frame with a successor
    masks: list         # MotionMask per frame
    poses_gt: Trajectory | None = None

    def __len__(self):
        return len(self.images)


def read_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    if not (root / "intrinsics.txt").exists():
        raise ParseError(f"{root}: missing intrinsics.txt")
    K = read_intrinsics(root / "intrinsics.txt")
    times = [float(t) for t in (root / "times.txt").read_text().split()]
    if not times:
        raise EmptyInputError(f"{root}: empty times.txt")
    images, depths, flows, masks = [], [], [], []
    for i in range(len(times)):
        images.append(read_p6(root / "rgb" / f"{i:04d}.ppm") / 255.0)
        depths.append(read_pfm(root / "depth" / f"{i:04d}.pfm").astype(np.float64))
        masks.append(MotionMask(read_p4(root / "mask" / f"{i:04d}.pbm")))
        flow_path = root / "flow" / f"{i:04d}.pfm"
        if flow_path.exists():
            flows.append(read_flow(flow_path))
    poses_gt = None
    if (root / "poses_gt.txt").exists():
        poses_gt = read_tum_trajectory(root / "poses_gt.txt")
    return Dataset(K, times, images, depths, flows, masks, poses_gt)


def read_semantic_masks(mask_dir, n_frames) -> list:
    """Reads per-frame P4 semantic masks named ``NNNN.pbm``."""
    root = Path(mask_dir)
    out = []
    for i in range(n_frames):
        out.append(SemanticMask(read_p4(root / f"{i:04d}.pbm")))
    return out


# ---------------------------------------------------------------------------
# Run configuration (TOML)


@dataclass
class RunConfig:
    """Typed view of the TOML run configuration.

    Sections: [ba], [mask], [field], [train], [paths]. Unknown sections or
    keys are rejected so misspelled hyperparameters fail loudly.
    """

    ba: BAConfig = field(default_factory=BAConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    field_cfg: FieldConfig = field(
        default_factory=lambda: FieldConfig(
            resolutions=(48, 48, 48, 12), ranks=(2, 2, 2), feature_dim=8
        )
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)


_SECTION_TYPES = {
    "ba": ("ba", BAConfig),
    "mask": ("mask", MaskConfig),
    "field": ("field_cfg", FieldConfig),
    "train": ("train", TrainConfig),
}


def _build_section(cls, table, section):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ParseError(
            f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}"
        )
    kwargs = {
        k: tuple(tuple(x) if isinstance(x, list) else x for x in v)
        if isinstance(v, list) else v
        for k, v in table.items()
    }
    return cls(**kwargs)


def read_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    cfg = RunConfig()
    for section, table in doc.items():
        if section == "paths":
            if not isinstance(table, dict):
                raise ParseError("[paths] must be a table")
            cfg.paths = dict(table)
            continue
        if section not in _SECTION_TYPES:
            raise ParseError(f"unknown section [{section}]")
        attr, cls = _SECTION_TYPES[section]
        setattr(cfg, attr, _build_section(cls, table, section))
    return cfg
