"""On-disk formats: PQT1 tensors, JSON manifests and JSON calibration reports.

PQT1 layout (little-endian)::

    bytes 0-3   b"PQT1"
    byte  4     dtype: 0 = float32, 1 = float64
    byte  5     ndim (must be 2)
    bytes 6-7   reserved, zero
    ndim x u64  dims
    payload     row-major values
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .reorder import PREDECESSORS

MAGIC = b"PQT1"
_HEADER = struct.Struct("<4sBBH")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"f32": 0, "f64": 1}
_MAX_ELEMENTS = 2**48

MANIFEST_FORMAT = "permuquant-manifest"
REPORT_FORMAT = "permuquant-report"
SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Malformed tensor, manifest or report file."""


# --- PQT1 tensors ---------------------------------------------------------


def encode_tensor(m, dtype: str = "f64") -> bytes:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise FormatError(f"PQT1 holds 2-D tensors only, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FormatError("non-finite values")
    code = _DTYPE_CODES[dtype]
    header = _HEADER.pack(MAGIC, code, 2, 0) + struct.pack("<2Q", *a.shape)
    return header + np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    magic, code, ndim, reserved = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError("bad magic")
    if code not in _DTYPES:
        raise FormatError(f"unsupported dtype code {code}")
    if ndim != 2:
        raise FormatError(f"ndim must be 2, got {ndim}")
    if reserved != 0:
        raise FormatError("reserved bytes must be zero")
    dims_end = _HEADER.size + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", buf, _HEADER.size)
    count = 1
    for n in dims:
        count *= n
        if count > _MAX_ELEMENTS:
            raise FormatError("dim overflow")
    dt = _DTYPES[code]
    if len(buf) - dims_end != count * dt.itemsize:
        raise FormatError("truncated payload")
    a = np.frombuffer(buf, dtype=dt, count=count, offset=dims_end).astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise FormatError("non-finite values")
    return a.reshape(dims)


def save_tensor(path, m, dtype: str = "f64") -> None:
    Path(path).write_bytes(encode_tensor(m, dtype))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# --- manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    weight_path: str
    acts_path: str
    predecessor: str = "none"
    predecessor_params_path: str | None = None


@dataclass(frozen=True)
class Manifest:
    layers: tuple[ManifestEntry, ...]
    root: Path = Path(".")

    def __post_init__(self):
        names = [e.name for e in self.layers]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise FormatError(f"duplicate layer names: {', '.join(dupes)}")
        for e in self.layers:
            if e.predecessor not in PREDECESSORS:
                raise FormatError(f"layer {e.name!r}: unknown predecessor {e.predecessor!r}")

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def entry(self, name: str) -> ManifestEntry:
        for e in self.layers:
            if e.name == name:
                return e
        raise KeyError(name)

    def check_files(self) -> None:
        for e in self.layers:
            for rel in (e.weight_path, e.acts_path, e.predecessor_params_path):
                if rel is not None and not self.resolve(rel).is_file():
                    raise FormatError(f"layer {e.name!r}: missing file {rel}")

    def to_dict(self) -> dict:
        layers = []
        for e in self.layers:
            d = asdict(e)
            if d["predecessor_params_path"] is None:
                del d["predecessor_params_path"]
            layers.append(d)
        return {"format": MANIFEST_FORMAT, "version": SCHEMA_VERSION, "layers": layers}


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if raw.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: not a {MANIFEST_FORMAT} file")
    try:
        entries = tuple(
            ManifestEntry(
                name=str(item["name"]),
                weight_path=str(item["weight_path"]),
                acts_path=str(item["acts_path"]),
                predecessor=str(item.get("predecessor", "none")),
                predecessor_params_path=item.get("predecessor_params_path"),
            )
            for item in raw["layers"]
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed layer entry ({exc})") from exc
    manifest = Manifest(entries, path.parent)
    if check_files:
        manifest.check_files()
    return manifest


def save_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")


# --- calibration reports ---------------------------------------------------


@dataclass(frozen=True)
class ReportConfig:
    bits: int
    group_size: int
    rounding: str
    tau: float
    tau_percent: float
    alpha_grid: list[float]
    hadamard: bool
    seed: int


@dataclass(frozen=True)
class LayerReport:
    name: str
    status: str  # "ok" or "skipped"
    predecessor: str
    d_in: int = 0
    d_out: int = 0
    error: str | None = None
    hadamard_block: int | None = None
    alpha: float | None = None
    accepted: bool = False
    perm: list[int] = field(default_factory=list)
    e_orig: float | None = None
    e_reorder: float | None = None
    e_deployed: float | None = None
    rel_improvement: float | None = None
    candidates: list[dict] = field(default_factory=list)
    peak_ratio: list[float] = field(default_factory=list)
    max_peak_ratio: float | None = None
    degenerate_groups: int = 0
    fold: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class CalibrationReport:
    config: ReportConfig
    layers: list[LayerReport]

    def summary(self) -> dict:
        done = [layer for layer in self.layers if layer.ok]
        accepted = sum(layer.accepted for layer in done)
        return {
            "layers": len(self.layers),
            "processed": len(done),
            "skipped": len(self.layers) - len(done),
            "accepted": accepted,
            "acceptance_rate": accepted / len(done) if done else 0.0,
            "total_e_orig": float(sum(layer.e_orig for layer in done)),
            "total_e_reorder": float(sum(layer.e_reorder for layer in done)),
            "total_e_deployed": float(sum(layer.e_deployed for layer in done)),
        }

    def layer(self, name: str) -> LayerReport:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": SCHEMA_VERSION,
            "config": asdict(self.config),
            "summary": self.summary(),
            "layers": [asdict(layer) for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CalibrationReport":
        if raw.get("format") != REPORT_FORMAT:
            raise FormatError(f"not a {REPORT_FORMAT} document")
        try:
            report = cls(
                ReportConfig(**raw["config"]), [LayerReport(**item) for item in raw["layers"]]
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed report ({exc})") from exc
        if "summary" in raw and raw["summary"] != report.summary():
            raise FormatError("report summary is inconsistent with its layer rows")
        return report

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def save_report(report: CalibrationReport, path) -> None:
    tmp = Path(f"{path}.tmp")
    tmp.write_text(report.dumps())
    os.replace(tmp, path)


def load_report(path) -> CalibrationReport:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    return CalibrationReport.from_dict(raw)
