"""Pipeline orchestration and command-line entry points.

The `segment` pipeline: crop the click-point ROI, threshold the probability
map, refine the mask, extract the boundary mesh, build columns, translate
costs, solve the closed-set max-flow, and rasterize the optimal surface.
`init_mode` selects the initial surface: "refined-mask" (full refinement),
"raw-mask" (largest thresholded component, probabilities untouched; the
no-refinement ablation arm) or "sphere" (fixed-radius analytic baseline,
typically paired with cost_mode=gradient).
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import click
import numpy as np

from . import graphcut, metrics, phantom, refine, surface, volio

__all__ = ["PipelineConfig", "PipelineError", "run_pipeline", "main"]

_COST_MODES = ("eq1", "gradient")
_COLUMN_MODES = ("elf", "normal")
_INIT_MODES = ("refined-mask", "raw-mask", "sphere")


@dataclass(frozen=True)
class PipelineConfig:
    roi_size: int = 32
    column_length: int = 50
    node_spacing_mm: float = 0.5
    delta: int = 2
    threshold: float = 0.5
    cost_mode: str = "eq1"
    column_mode: str = "elf"
    init_mode: str = "refined-mask"
    sphere_radius_mm: float = 8.0
    open_iterations: int = 2

    def __post_init__(self):
        if self.cost_mode not in _COST_MODES:
            raise ValueError(f"cost_mode must be one of {_COST_MODES}")
        if self.column_mode not in _COLUMN_MODES:
            raise ValueError(f"column_mode must be one of {_COLUMN_MODES}")
        if self.init_mode not in _INIT_MODES:
            raise ValueError(f"init_mode must be one of {_INIT_MODES}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        for name in ("roi_size", "column_length", "node_spacing_mm", "sphere_radius_mm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("delta", "open_iterations"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


_INPUT_ERRORS = (OSError, ValueError)


def run_pipeline(
    intensity_path,
    prob_path,
    center,
    config: PipelineConfig = PipelineConfig(),
    out_mask_path=None,
):
    """Run the full segmentation pipeline; returns (mask, report dict).

    The output mask lives on the ROI grid (its origin places it inside the
    source volume). When out_mask_path is given the mask is also written.
    """
    timings: dict = {}

    def stage(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        timings[name] = round((time.perf_counter() - t0) * 1000.0, 3)
        return result

    def load():
        intensity = volio.read_metaimage(intensity_path, "scalar")
        prob = volio.read_metaimage(prob_path, "probability")
        if not intensity.same_geometry(prob):
            raise ValueError("intensity and probability volume geometries differ")
        return intensity, prob

    intensity, prob = stage("load", load)
    roi = volio.RoiSpec(center=center, size=config.roi_size)
    intensity_roi, prob_roi = stage(
        "roi", lambda: (volio.crop_roi(intensity, roi), volio.crop_roi(prob, roi))
    )

    refine_report = None
    if config.init_mode == "sphere":
        center_world = intensity_roi.index_to_world(
            (np.asarray(intensity_roi.dims) - 1) / 2.0
        )
        mesh = stage(
            "mesh", surface.icosphere, center_world, config.sphere_radius_mm,
            radial_jitter=1e-6,
        )
        cost_prob = prob_roi
    else:
        seg = stage(
            "threshold",
            lambda: volio.LabelVolume(
                (prob_roi.data >= config.threshold).astype(np.float32),
                prob_roi.spacing,
                prob_roi.origin,
            ),
        )
        if config.init_mode == "refined-mask":
            mask, cost_prob, refine_report = stage(
                "refine",
                refine.refine_pipeline,
                prob_roi,
                seg,
                intensity_roi,
                open_iterations=config.open_iterations,
                close_iterations=config.open_iterations,
            )
        else:  # raw-mask: no suppression, probabilities untouched
            mask = stage("refine", refine.largest_component, seg)
            cost_prob = prob_roi
        mesh = stage("mesh", surface.extract_mesh, mask)

    columns = stage(
        "columns",
        surface.build_columns,
        mesh,
        length=config.column_length,
        spacing=config.node_spacing_mm,
        mode=config.column_mode,
    )
    if config.cost_mode == "eq1":
        graph = stage("costs", graphcut.probability_costs, columns, cost_prob, config.delta)
    else:
        graph = stage("costs", graphcut.gradient_costs, columns, intensity_roi, config.delta)
    solution = stage("solve", graphcut.solve_columns, graph)
    out_mask = stage("voxelize", graphcut.voxelize, solution, columns, mesh, prob_roi)
    if out_mask_path is not None:
        stage("write", volio.write_metaimage, out_mask, out_mask_path)

    report = {
        "config": asdict(config),
        "center": [int(c) for c in roi.center],
        "inputs": {"intensity": str(intensity_path), "prob": str(prob_path)},
        "mesh": {"vertices": mesh.num_vertices, "triangles": int(len(mesh.triangles))},
        "refine": refine_report.as_dict() if refine_report is not None else None,
        "solution": solution.as_dict(),
        "output": {
            "voxels": out_mask.foreground_count,
            "path": str(out_mask_path) if out_mask_path else None,
        },
        "stages_ms": timings,
    }
    return out_mask, report


def _fail(err: PipelineError):
    click.echo(f"error at stage {err.stage!r}: {err.cause}", err=True)
    sys.exit(2 if isinstance(err.cause, _INPUT_ERRORS) else 1)


def _parse_center(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise click.BadParameter(f"expected x,y,z, got {text!r}")
    return tuple(int(p) for p in parts)


@click.group()
def main():
    """Probability-map-driven globally optimal 3D surface segmentation."""


@main.command()
@click.option("--intensity", "intensity_path", required=True, type=click.Path())
@click.option("--prob", "prob_path", required=True, type=click.Path())
@click.option("--center", default=None, help="ROI center voxel index as x,y,z.")
@click.option("--centers-file", default=None, type=click.Path(),
              help="Batch mode: file with one x,y,z center per line.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output mask path (batch mode: output directory).")
@click.option("--report", "report_path", default=None, type=click.Path())
@click.option("--roi-size", default=32, show_default=True)
@click.option("--column-length", default=50, show_default=True)
@click.option("--node-spacing-mm", default=0.5, show_default=True)
@click.option("--delta", default=2, show_default=True)
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--cost-mode", type=click.Choice(_COST_MODES), default="eq1", show_default=True)
@click.option("--column-mode", type=click.Choice(_COLUMN_MODES), default="elf", show_default=True)
@click.option("--init-mode", type=click.Choice(_INIT_MODES), default="refined-mask",
              show_default=True)
@click.option("--sphere-radius-mm", default=8.0, show_default=True)
@click.option("--open-iterations", default=2, show_default=True)
def segment(intensity_path, prob_path, center, centers_file, out_path, report_path, **cfg):
    """Segment one ROI (or a batch of ROIs) to a globally optimal surface."""
    try:
        config = PipelineConfig(**cfg)
    except ValueError as exc:
        click.echo(f"error at stage 'config': {exc}", err=True)
        sys.exit(2)
    if (center is None) == (centers_file is None):
        click.echo("error at stage 'config': give exactly one of --center/--centers-file",
                   err=True)
        sys.exit(2)

    if center is not None:
        try:
            _, report = run_pipeline(
                intensity_path, prob_path, _parse_center(center), config, out_path
            )
        except PipelineError as exc:
            _fail(exc)
        payload = json.dumps(report, indent=2)
        if report_path:
            with open(report_path, "w", encoding="ascii") as fh:
                fh.write(payload + "\n")
        click.echo(payload)
        return

    try:
        with open(centers_file, "r", encoding="ascii") as fh:
            centers = [_parse_center(line.strip()) for line in fh if line.strip()]
    except OSError as exc:
        click.echo(f"error at stage 'load': {exc}", err=True)
        sys.exit(2)
    os.makedirs(out_path, exist_ok=True)
    workers = int(os.environ.get("DEEP_LOGISMOS_THREADS", os.cpu_count() or 1))

    def one(item):
        index, c = item
        mask_path = os.path.join(out_path, f"mask_{index:03d}.mha")
        _, rep = run_pipeline(intensity_path, prob_path, c, config, mask_path)
        return rep

    try:
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            reports = list(pool.map(one, enumerate(centers)))
    except PipelineError as exc:
        _fail(exc)
    payload = json.dumps(reports, indent=2)
    if report_path:
        with open(report_path, "w", encoding="ascii") as fh:
            fh.write(payload + "\n")
    click.echo(payload)


@main.command("refine")
@click.option("--intensity", "intensity_path", required=True, type=click.Path())
@click.option("--prob", "prob_path", required=True, type=click.Path())
@click.option("--threshold", default=0.5, show_default=True)
@click.option("--open-iterations", default=2, show_default=True)
@click.option("--out-mask", default=None, type=click.Path())
@click.option("--out-prob", default=None, type=click.Path())
def refine_cmd(intensity_path, prob_path, threshold, open_iterations, out_mask, out_prob):
    """Threshold a probability map and refine it; prints the report JSON."""
    try:
        intensity = volio.read_metaimage(intensity_path, "scalar")
        prob = volio.read_metaimage(prob_path, "probability")
        seg = volio.LabelVolume(
            (prob.data >= threshold).astype(np.float32), prob.spacing, prob.origin
        )
        mask, prob2, report = refine.refine_pipeline(
            prob, seg, intensity,
            open_iterations=open_iterations, close_iterations=open_iterations,
        )
        if out_mask:
            volio.write_metaimage(mask, out_mask)
        if out_prob:
            volio.write_metaimage(prob2, out_prob)
    except _INPUT_ERRORS as exc:
        click.echo(f"error at stage 'refine': {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(report.as_dict(), indent=2))


@main.command("metrics")
@click.option("--seg", "seg_path", required=True, type=click.Path())
@click.option("--ref", "ref_path", required=True, type=click.Path())
def metrics_cmd(seg_path, ref_path):
    """DSC and RVD of a segmentation against a reference mask."""
    try:
        seg = volio.read_metaimage(seg_path, "label")
        ref = volio.read_metaimage(ref_path, "label")
        result = metrics.evaluate(seg, ref)
    except _INPUT_ERRORS as exc:
        click.echo(f"error at stage 'metrics': {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps({"dsc": result.dsc, "rvd": result.rvd}))


@main.command("phantom")
@click.option("--spec", "spec_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
def phantom_cmd(spec_path, out_dir):
    """Generate a phantom triple (intensity, label, probability) from a JSON spec.

    The JSON holds the PhantomSpec fields plus a "prob" object
    (tau_mm, noise_sigma, seed) and an optional "distractor" object
    (offset_mm, radius_mm, intensity_mean, noise_sigma, seed).
    """
    try:
        with open(spec_path, "r", encoding="ascii") as fh:
            raw = json.load(fh)
        prob_cfg = raw.pop("prob", {"tau_mm": 1.0, "noise_sigma": 0.0, "seed": 0})
        distractor_cfg = raw.pop("distractor", None)
        spec = phantom.PhantomSpec.from_dict(raw)
        intensity, label = phantom.make_phantom(spec)
        prob_label = label
        distractor_label = None
        if distractor_cfg is not None:
            intensity, distractor_label = phantom.add_distractor(
                intensity,
                label,
                offset_mm=distractor_cfg["offset_mm"],
                radius_mm=distractor_cfg["radius_mm"],
                intensity_mean=distractor_cfg["intensity_mean"],
                noise_sigma=distractor_cfg.get("noise_sigma", 0.0),
                seed=distractor_cfg.get("seed", 0),
            )
            union = np.maximum(label.data, distractor_label.data)
            prob_label = volio.LabelVolume(union, label.spacing, label.origin)
        prob = phantom.simulate_prob(
            prob_label,
            tau=prob_cfg.get("tau_mm", 1.0),
            noise_sigma=prob_cfg.get("noise_sigma", 0.0),
            seed=prob_cfg.get("seed", 0),
        )
        os.makedirs(out_dir, exist_ok=True)
        volio.write_metaimage(intensity, os.path.join(out_dir, "intensity.mha"))
        volio.write_metaimage(label, os.path.join(out_dir, "label.mha"))
        volio.write_metaimage(prob, os.path.join(out_dir, "prob.mha"))
        if distractor_label is not None:
            volio.write_metaimage(distractor_label, os.path.join(out_dir, "distractor.mha"))
        sidecar = {
            "spec": raw,
            "prob": prob_cfg,
            "distractor": distractor_cfg,
            "label_voxels": label.foreground_count,
            "files": ["intensity.mha", "label.mha", "prob.mha"]
            + (["distractor.mha"] if distractor_label is not None else []),
        }
        with open(os.path.join(out_dir, "spec.json"), "w", encoding="ascii") as fh:
            json.dump(sidecar, fh, indent=2)
    except (_INPUT_ERRORS, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"error at stage 'phantom': {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(sidecar, indent=2))


if __name__ == "__main__":
    main()
