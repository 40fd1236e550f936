"""Mask refinement: mixture-based false-positive suppression plus 3D morphology.

The suppression step fits a deterministic two-component Gaussian mixture to the
intensities of segmented voxels. When the dark component is clearly separated
from the bright one (mu2 < mu1 - sigma1), voxels darker than mu2 are cleared
from both the mask and the probability map. Morphological opening, largest
component retention and closing then despeckle the mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .volio import LabelVolume, ProbabilityVolume, ScalarVolume

__all__ = [
    "GmmFit",
    "RefineReport",
    "DegenerateSamplesError",
    "fit_gmm2",
    "gmm_suppress",
    "open3d",
    "close3d",
    "largest_component",
    "count_components",
    "refine_pipeline",
]

_CROSS = ndimage.generate_binary_structure(3, 1)  # 6-neighbor cross
_FULL = np.ones((3, 3, 3), dtype=bool)  # 26-connectivity


class DegenerateSamplesError(ValueError):
    """All samples identical; a two-component fit is meaningless."""


@dataclass(frozen=True)
class GmmFit:
    """Two-component univariate Gaussian mixture, components ordered mu1 >= mu2."""

    mu1: float
    sigma1: float
    w1: float
    mu2: float
    sigma2: float
    w2: float
    loglik: float
    iterations: int
    loglik_trace: tuple = ()


@dataclass(frozen=True)
class RefineReport:
    gmm: GmmFit
    condition_applied: bool
    voxels_zeroed: int
    components_before: int
    components_after: int

    def as_dict(self) -> dict:
        g = self.gmm
        return {
            "mu1": g.mu1,
            "sigma1": g.sigma1,
            "w1": g.w1,
            "mu2": g.mu2,
            "sigma2": g.sigma2,
            "w2": g.w2,
            "loglik": g.loglik,
            "iterations": g.iterations,
            "condition_applied": self.condition_applied,
            "voxels_zeroed": self.voxels_zeroed,
            "components_before": self.components_before,
            "components_after": self.components_after,
        }


def _log_gauss(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)


def fit_gmm2(samples, tol: float = 1e-8, max_iter: int = 500) -> GmmFit:
    """Deterministic EM fit of a two-component univariate Gaussian mixture.

    Initialization splits the sorted samples at the median; no RNG anywhere.
    Variances are floored at (1e-6 * sample range)^2 so EM cannot collapse.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 8:
        raise ValueError(f"need at least 8 samples, got {x.size}")
    span = float(x.max() - x.min())
    if span == 0.0:
        raise DegenerateSamplesError("all samples identical")
    sigma_floor = 1e-6 * span

    xs = np.sort(x)
    half = x.size // 2
    lo, hi = xs[:half], xs[half:]
    mu = np.array([hi.mean(), lo.mean()])
    var = np.maximum([hi.var(), lo.var()], sigma_floor**2)
    w = np.array([0.5, 0.5])

    trace = []
    loglik = -np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # E step in the log domain
        logp = np.stack(
            [np.log(w[c]) + _log_gauss(x, mu[c], math.sqrt(var[c])) for c in (0, 1)]
        )
        top = logp.max(axis=0)
        lse = top + np.log(np.exp(logp - top).sum(axis=0))
        new_loglik = float(lse.sum())
        trace.append(new_loglik)
        resp = np.exp(logp - lse)
        # M step, variance floored
        nk = resp.sum(axis=1)
        w = nk / x.size
        mu = (resp @ x) / nk
        var = np.maximum(
            np.array([(resp[c] @ (x - mu[c]) ** 2) / nk[c] for c in (0, 1)]),
            sigma_floor**2,
        )
        if abs(new_loglik - loglik) < tol:
            loglik = new_loglik
            break
        loglik = new_loglik

    order = np.argsort(-mu)  # component 1 has the larger mean
    mu, var, w = mu[order], var[order], w[order]
    return GmmFit(
        mu1=float(mu[0]),
        sigma1=float(math.sqrt(var[0])),
        w1=float(w[0]),
        mu2=float(mu[1]),
        sigma2=float(math.sqrt(var[1])),
        w2=float(w[1]),
        loglik=loglik,
        iterations=iterations,
        loglik_trace=tuple(trace),
    )


def count_components(mask: LabelVolume) -> int:
    """Number of 26-connected foreground components."""
    _, n = ndimage.label(mask.as_bool(), structure=_FULL)
    return int(n)


def gmm_suppress(
    prob: ProbabilityVolume, seg: LabelVolume, intensity: ScalarVolume
):
    """Suppress dark false positives using intensities of segmented voxels only.

    Fits the mixture to intensity[seg == 1]. If mu2 < mu1 - sigma1, every voxel
    with intensity < mu2 is cleared in both the probability map and the mask;
    otherwise both are returned unchanged.
    """
    if not (prob.same_geometry(seg) and seg.same_geometry(intensity)):
        raise ValueError("prob, seg and intensity geometries must match")
    fg = seg.as_bool()
    if fg.sum() < 8:
        raise ValueError(f"segmentation has {int(fg.sum())} foreground voxels, need >= 8")
    fit = fit_gmm2(intensity.data[fg])
    components_before = count_components(seg)
    condition = fit.mu2 < fit.mu1 - fit.sigma1
    if not condition:
        report = RefineReport(fit, False, 0, components_before, components_before)
        return prob, seg, report

    dark = intensity.data < fit.mu2
    zeroed = int(np.count_nonzero(dark & fg))
    new_prob = np.where(dark, 0.0, prob.data).astype(np.float32)
    new_seg = np.where(dark, 0.0, seg.data).astype(np.float32)
    prob_out = ProbabilityVolume(new_prob, prob.spacing, prob.origin)
    seg_out = LabelVolume(new_seg, seg.spacing, seg.origin)
    report = RefineReport(fit, True, zeroed, components_before, count_components(seg_out))
    return prob_out, seg_out, report


def open3d(mask: LabelVolume, iterations: int) -> LabelVolume:
    """Binary opening: erosions then dilations with the 6-neighbor cross.

    The volume is embedded in infinite background, so border voxels erode
    like any others and nothing grows back from outside.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    out = mask.as_bool()
    for _ in range(iterations):
        out = ndimage.binary_erosion(out, structure=_CROSS, border_value=0)
    for _ in range(iterations):
        out = ndimage.binary_dilation(out, structure=_CROSS, border_value=0)
    return LabelVolume(out.astype(np.float32), mask.spacing, mask.origin)


def close3d(mask: LabelVolume, iterations: int) -> LabelVolume:
    """Binary closing: dilations then erosions, same element and border rule.

    Computed on a grid padded by `iterations` so the intermediate dilation can
    extend past the volume before eroding back; this keeps closing extensive
    for masks that touch the border (a full mask stays full).
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return LabelVolume(mask.data, mask.spacing, mask.origin)
    out = np.pad(mask.as_bool(), iterations)
    for _ in range(iterations):
        out = ndimage.binary_dilation(out, structure=_CROSS, border_value=0)
    for _ in range(iterations):
        out = ndimage.binary_erosion(out, structure=_CROSS, border_value=0)
    core = out[iterations:-iterations, iterations:-iterations, iterations:-iterations]
    return LabelVolume(core.astype(np.float32), mask.spacing, mask.origin)


def largest_component(mask: LabelVolume) -> LabelVolume:
    """Keep the largest 26-connected component.

    Size ties go to the component whose centroid is closest (mm) to the volume
    center, then to the one containing the lowest x-fastest linear index.
    """
    labels, n = ndimage.label(mask.as_bool(), structure=_FULL)
    if n == 0:
        return LabelVolume(np.zeros(mask.dims, np.float32), mask.spacing, mask.origin)
    counts = np.bincount(labels.ravel())[1:]
    best = counts.max()
    candidates = [c + 1 for c in np.flatnonzero(counts == best)]
    if len(candidates) > 1:
        spacing = np.asarray(mask.spacing)
        center = (np.asarray(mask.dims) - 1) / 2.0 * spacing
        centroids = ndimage.center_of_mass(mask.as_bool(), labels, candidates)

        def rank(item):
            comp, centroid = item
            dist = float(np.linalg.norm(np.asarray(centroid) * spacing - center))
            where = np.flatnonzero((labels == comp).ravel(order="F"))
            return (dist, int(where[0]))

        candidates = [min(zip(candidates, centroids), key=rank)[0]]
    keep = labels == candidates[0]
    return LabelVolume(keep.astype(np.float32), mask.spacing, mask.origin)


def refine_pipeline(
    prob: ProbabilityVolume,
    seg: LabelVolume,
    intensity: ScalarVolume,
    open_iterations: int = 2,
    close_iterations: int = 2,
):
    """Suppression, opening, largest-component retention, closing, in that order.

    Only the suppression stage touches the probability map; morphology acts on
    the mask alone. Returns (mask, probability map, report).
    """
    prob2, seg2, report = gmm_suppress(prob, seg, intensity)
    mask = open3d(seg2, open_iterations)
    mask = largest_component(mask)
    mask = close3d(mask, close_iterations)
    report = replace(
        report,
        components_before=count_components(seg),
        components_after=count_components(mask),
    )
    return mask, prob2, report
