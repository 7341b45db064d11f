"""End-to-end calibration over a manifest of layers, and re-measurement of saved reports."""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import DimensionError, Permutation, apply_perm_cols
from .formats import (
    CalibrationReport,
    FormatError,
    LayerReport,
    Manifest,
    ManifestEntry,
    ReportConfig,
    load_tensor,
    save_manifest,
    save_tensor,
)
from .quantizer import QuantConfig
from .reorder import (
    DEFAULT_ALPHA_GRID,
    LayerSpec,
    candidate_permutation,
    layer_quant_error,
    select_permutation,
)
from .statistics import group_peak_ratios
from .synthetic import heavy_tailed_layer, predecessor_params
from .transforms import (
    HadamardConfig,
    NormSpec,
    fold_perm_into_norm,
    fold_perm_into_prev_linear,
    fold_perm_into_weight,
    hadamard_rows,
    hadamard_transform_layer,
)

log = logging.getLogger(__name__)

REL_TOL = 1e-9


class EvaluationError(ValueError):
    """A report cannot be re-measured against a manifest."""


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def _activation_fold(predecessor: str, accepted: bool, hadamard: bool) -> str:
    if not accepted:
        return "none"
    if predecessor == "linear":
        return "prev_linear_columns"
    if hadamard:
        return "hadamard_output_layout"
    return {
        "rmsnorm": "rmsnorm_gamma",
        "layernorm_modulated": "layernorm_modulation",
        "none": "runtime_gather",
    }[predecessor]


def _check_params(kind: str, params: np.ndarray, d_in: int) -> None:
    expected_rows = {"rmsnorm": 1, "layernorm_modulated": 2}.get(kind)
    if params.shape[1] != d_in or (expected_rows and params.shape[0] != expected_rows):
        raise DimensionError(
            f"{kind} parameters have shape {params.shape}, incompatible with d_in={d_in}"
        )


def _fold_predecessor(kind: str, params: np.ndarray, perm: Permutation, hcfg) -> np.ndarray:
    if kind == "linear":
        w_prev = hadamard_rows(params, hcfg) if hcfg is not None else params
        return fold_perm_into_prev_linear(w_prev, perm)
    if hcfg is not None or kind == "none":
        # the permutation lives in the Hadamard output layout, norm stays as is
        return params
    if kind == "rmsnorm":
        folded = fold_perm_into_norm(NormSpec("rmsnorm", gamma=params[0]), perm)
        return folded.gamma[None, :]
    folded = fold_perm_into_norm(
        NormSpec("layernorm", mod_scale=params[0], mod_shift=params[1]), perm
    )
    return np.stack([folded.mod_scale, folded.mod_shift])


def load_layer(manifest: Manifest, entry: ManifestEntry) -> LayerSpec:
    return LayerSpec(
        load_tensor(manifest.resolve(entry.weight_path)),
        load_tensor(manifest.resolve(entry.acts_path)),
        entry.predecessor,
    )


def working_layer(layer: LayerSpec, hadamard: bool):
    """The layer in the basis that actually gets quantized, plus its Hadamard config."""
    if not hadamard:
        return layer, None
    hcfg = HadamardConfig.for_dim(layer.d_in)
    return hadamard_transform_layer(layer, hcfg), hcfg


def calibrate_layer(
    manifest: Manifest,
    entry: ManifestEntry,
    cfg: QuantConfig,
    tau: float,
    alpha_grid,
    hadamard: bool,
    export_dir: Path | None = None,
) -> LayerReport:
    try:
        layer = load_layer(manifest, entry)
        params = None
        if entry.predecessor_params_path is not None:
            params = load_tensor(manifest.resolve(entry.predecessor_params_path))
            _check_params(entry.predecessor, params, layer.d_in)
        if layer.d_in % cfg.group_size:
            raise DimensionError(f"group size {cfg.group_size} does not divide d_in {layer.d_in}")
    except DimensionError as exc:
        log.warning("skipping layer %s: %s", entry.name, exc)
        return LayerReport(entry.name, "skipped", entry.predecessor, error=str(exc))

    work, hcfg = working_layer(layer, hadamard)
    decision = select_permutation(work, cfg, alpha_grid, tau)
    diag = group_peak_ratios(apply_perm_cols(work.calib_acts, decision.perm), cfg.grouping(layer.d_in))
    e_deployed = decision.e_reorder if decision.accepted else decision.e_orig
    fold = {
        "weight": "rows_permuted_offline" if decision.accepted else "none",
        "activation": _activation_fold(entry.predecessor, decision.accepted, hadamard),
    }

    if export_dir is not None:
        stem = export_dir / _safe_name(entry.name)
        save_tensor(f"{stem}.weight.pqt", fold_perm_into_weight(work.weight, decision.perm))
        if params is not None:
            folded = _fold_predecessor(entry.predecessor, params, decision.perm, hcfg)
            save_tensor(f"{stem}.pred.pqt", folded)

    log.info(
        "%s: alpha=%.1f e_orig=%.6g e_reorder=%.6g accepted=%s",
        entry.name, decision.alpha, decision.e_orig, decision.e_reorder, decision.accepted,
    )
    return LayerReport(
        name=entry.name,
        status="ok",
        predecessor=entry.predecessor,
        d_in=layer.d_in,
        d_out=layer.d_out,
        hadamard_block=hcfg.block if hcfg else None,
        alpha=decision.alpha,
        accepted=decision.accepted,
        perm=decision.perm.tolist(),
        e_orig=decision.e_orig,
        e_reorder=decision.e_reorder,
        e_deployed=e_deployed,
        rel_improvement=decision.rel_improvement,
        candidates=[{"alpha": a, "error": e} for a, e in decision.candidates.items()],
        peak_ratio=diag.peak_ratio.tolist(),
        max_peak_ratio=diag.max_peak_ratio,
        degenerate_groups=int(np.sum(diag.degenerate)),
        fold=fold,
    )


def calibrate(
    manifest: Manifest,
    cfg: QuantConfig,
    tau: float = 0.0,
    alpha_grid=DEFAULT_ALPHA_GRID,
    hadamard: bool = False,
    seed: int = 0,
    jobs: int = 1,
    export_dir=None,
    tau_percent: float | None = None,
) -> CalibrationReport:
    """Choose and fold a permutation for every manifest layer.

    ``tau`` is a fraction (0.025 for 2.5%); ``tau_percent`` only sets the
    value echoed in the report header. Layers that cannot be processed
    (for example ``g`` not dividing ``d_in``) are reported as skipped. Row
    order always follows the manifest.
    """
    grid = [float(a) for a in alpha_grid]
    if export_dir is not None:
        export_dir = Path(export_dir)
        export_dir.mkdir(parents=True, exist_ok=True)

    def run(entry):
        return calibrate_layer(manifest, entry, cfg, tau, grid, hadamard, export_dir)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run, manifest.layers))
    else:
        rows = [run(entry) for entry in manifest.layers]

    config = ReportConfig(
        bits=cfg.bits,
        group_size=cfg.group_size,
        rounding=cfg.rounding,
        tau=tau,
        tau_percent=tau * 100.0 if tau_percent is None else float(tau_percent),
        alpha_grid=grid,
        hadamard=hadamard,
        seed=seed,
    )
    return CalibrationReport(config, rows)


@dataclass(frozen=True)
class EvalRow:
    name: str
    status: str
    alpha: float | None = None
    accepted: bool = False
    e_orig: float | None = None
    e_reorder: float | None = None
    e_deployed: float | None = None
    stored_e_reorder: float | None = None
    rel_diff: float | None = None
    match: bool = True


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def evaluate(manifest: Manifest, report: CalibrationReport) -> list[EvalRow]:
    """Recompute each reported layer's errors from the raw tensors."""
    c = report.config
    cfg = QuantConfig(c.bits, c.group_size, c.rounding)
    rows = []
    for lr in report.layers:
        try:
            entry = manifest.entry(lr.name)
        except KeyError:
            raise EvaluationError(f"layer {lr.name!r} is not in the manifest") from None
        if not lr.ok:
            rows.append(EvalRow(lr.name, lr.status))
            continue
        work, _ = working_layer(load_layer(manifest, entry), c.hadamard)
        if len(lr.perm) != work.d_in:
            raise EvaluationError(
                f"layer {lr.name!r}: stored permutation has length {len(lr.perm)}, d_in is {work.d_in}"
            )
        deployed = Permutation.from_forward(lr.perm)
        candidate = candidate_permutation(work, lr.alpha)
        e_orig = layer_quant_error(work, Permutation.identity(work.d_in), cfg)
        e_reorder = layer_quant_error(work, candidate, cfg)
        e_deployed = layer_quant_error(work, deployed, cfg)
        consistent = deployed == (candidate if lr.accepted else Permutation.identity(work.d_in))
        rel = max(_rel(e_reorder, lr.e_reorder), _rel(e_orig, lr.e_orig), _rel(e_deployed, lr.e_deployed))
        rows.append(
            EvalRow(
                lr.name, lr.status, lr.alpha, lr.accepted, e_orig, e_reorder, e_deployed,
                lr.e_reorder, rel, consistent and rel <= REL_TOL,
            )
        )
    return rows


EVAL_COLUMNS = (
    "name", "status", "alpha", "accepted", "e_orig", "e_reorder", "e_deployed",
    "stored_e_reorder", "rel_diff", "match",
)


def format_table(rows: list[dict], columns=EVAL_COLUMNS, sep: str = "\t") -> str:
    """Render dict rows as delimited text with a header line."""

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = [sep.join(columns)]
    lines.extend(sep.join(cell(row.get(col)) for col in columns) for row in rows)
    return "\n".join(lines) + "\n"


REPORT_COLUMNS = (
    "name", "status", "alpha", "accepted", "e_orig", "e_reorder", "e_deployed",
    "rel_improvement", "max_peak_ratio", "fold_activation",
)


def report_table(report: CalibrationReport, sep: str = "\t") -> str:
    rows = []
    for lr in report.layers:
        row = asdict(lr)
        row["fold_activation"] = lr.fold.get("activation", "")
        rows.append(row)
    return format_table(rows, REPORT_COLUMNS, sep)


def generate_synthetic(
    out_dir,
    layers: int,
    d: int,
    d_out: int,
    tokens: int,
    spread: float = 0.5,
    seed: int = 0,
    dtype: str = "f32",
    predecessors=("rmsnorm", "linear", "layernorm_modulated", "none"),
) -> Manifest:
    """Write ``layers`` heavy-tailed synthetic layers plus a manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(layers):
        kind = predecessors[i % len(predecessors)]
        layer = heavy_tailed_layer(rng, d, d_out, tokens, spread=spread, predecessor=kind)
        name = f"layer_{i:03d}"
        save_tensor(out / f"{name}.weight.pqt", layer.weight, dtype)
        save_tensor(out / f"{name}.acts.pqt", layer.calib_acts, dtype)
        params = predecessor_params(rng, kind, d)
        params_path = None
        if params is not None:
            params_path = f"{name}.pred.pqt"
            save_tensor(out / params_path, params, dtype)
        entries.append(
            ManifestEntry(name, f"{name}.weight.pqt", f"{name}.acts.pqt", kind, params_path)
        )
    manifest = Manifest(tuple(entries), out)
    save_manifest(manifest, out / "manifest.json")
    return manifest


__all__ = [
    "EvalRow",
    "EvaluationError",
    "FormatError",
    "calibrate",
    "calibrate_layer",
    "evaluate",
    "format_table",
    "generate_synthetic",
    "report_table",
]
