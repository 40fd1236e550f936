import numpy as np
import pytest

from deeplogismos.refine import (
    DegenerateSamplesError,
    close3d,
    count_components,
    fit_gmm2,
    gmm_suppress,
    largest_component,
    open3d,
    refine_pipeline,
)
from deeplogismos.volio import LabelVolume, ProbabilityVolume, ScalarVolume


# --- scalar reference morphology (independent oracle) -----------------------

def ref_erode(mask):
    nx, ny, nz = mask.shape
    out = np.zeros_like(mask)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k]:
                    continue
                keep = True
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    a, b, c = i + di, j + dj, k + dk
                    if not (0 <= a < nx and 0 <= b < ny and 0 <= c < nz):
                        keep = False  # outside counts as background
                        break
                    if not mask[a, b, c]:
                        keep = False
                        break
                out[i, j, k] = keep
    return out


def ref_dilate(mask):
    nx, ny, nz = mask.shape
    out = mask.copy()
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if mask[i, j, k]:
                    continue
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                   (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    a, b, c = i + di, j + dj, k + dk
                    if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and mask[a, b, c]:
                        out[i, j, k] = True
                        break
    return out


def ref_open(mask, iterations):
    out = mask.copy()
    for _ in range(iterations):
        out = ref_erode(out)
    for _ in range(iterations):
        out = ref_dilate(out)
    return out


def ref_close(mask, iterations):
    # closing runs on a padded grid so dilation can pass the border
    out = np.pad(mask, iterations)
    for _ in range(iterations):
        out = ref_dilate(out)
    for _ in range(iterations):
        out = ref_erode(out)
    if iterations:
        out = out[iterations:-iterations, iterations:-iterations, iterations:-iterations]
    return out


def as_label(bool_arr):
    return LabelVolume(bool_arr.astype(np.float32))


# --- GMM --------------------------------------------------------------------

def mixture_samples(seed=42, n=2000):
    rng = np.random.default_rng(seed)
    n1 = int(0.6 * n)
    return np.concatenate([rng.normal(180, 15, n1), rng.normal(60, 10, n - n1)])


def test_fit_recovers_known_mixture():
    fit = fit_gmm2(mixture_samples())
    assert abs(fit.mu1 - 180) < 5 and abs(fit.mu2 - 60) < 5
    assert abs(fit.sigma1 - 15) < 0.2 * 15
    assert abs(fit.sigma2 - 10) < 0.2 * 10
    assert 0 < fit.w1 < 1 and 0 < fit.w2 < 1
    assert abs(fit.w1 + fit.w2 - 1.0) < 1e-12
    assert fit.mu1 >= fit.mu2


def test_loglik_monotone_every_iteration():
    for seed in (1, 2, 3, 42):
        fit = fit_gmm2(mixture_samples(seed))
        diffs = np.diff(fit.loglik_trace)
        assert (diffs >= -1e-9).all()


def test_fit_deterministic():
    samples = list(mixture_samples(5))
    a, b = fit_gmm2(samples), fit_gmm2(samples)
    assert a == b


def test_fit_errors():
    with pytest.raises(ValueError, match="8 samples"):
        fit_gmm2([1.0, 2.0, 3.0])
    with pytest.raises(DegenerateSamplesError):
        fit_gmm2([10.0] * 8)


# --- suppression ------------------------------------------------------------

def bimodal_volumes():
    rng = np.random.default_rng(1)
    dims = (16, 16, 16)
    intensity = np.full(dims, 100.0, np.float32)
    seg = np.zeros(dims, np.float32)
    prob = np.zeros(dims, np.float32)
    bright = [(i, j, 5) for i in range(10) for j in range(10)]
    dark = [(i, j, 10) for i in range(10) for j in range(5)]
    for i, j, k in bright:
        intensity[i, j, k] = 200 + rng.normal(0, 3)
        seg[i, j, k] = 1
        prob[i, j, k] = 0.9
    for i, j, k in dark:
        intensity[i, j, k] = 40 + rng.normal(0, 3)
        seg[i, j, k] = 1
        prob[i, j, k] = 0.8
    return ProbabilityVolume(prob), LabelVolume(seg), ScalarVolume(intensity)


def test_suppress_zeroes_exactly_below_mu2():
    prob, seg, intensity = bimodal_volumes()
    p2, s2, report = gmm_suppress(prob, seg, intensity)
    assert report.condition_applied
    dark = intensity.data < report.gmm.mu2
    assert np.array_equal(p2.data == 0, (prob.data == 0) | dark)
    assert np.array_equal(s2.data == 0, (seg.data == 0) | dark)
    assert report.voxels_zeroed == int((dark & (seg.data == 1)).sum())
    # suppression never raises a probability or adds foreground
    assert (p2.data <= prob.data).all()
    assert (s2.data <= seg.data).all()


def test_suppress_single_cluster_unchanged():
    # tight homogeneous cluster: the two fitted components overlap and the
    # separation condition mu2 < mu1 - sigma1 fails, so nothing is touched
    rng = np.random.default_rng(2)
    dims = (12, 12, 12)
    intensity = np.full(dims, 100.0, np.float32)
    seg = np.zeros(dims, np.float32)
    seg[2:10, 2:10, 2:10] = 1
    intensity[seg == 1] = (150 + rng.normal(0, 2, int(seg.sum()))).astype(np.float32)
    prob = ProbabilityVolume(np.where(seg == 1, 0.9, 0.1).astype(np.float32))
    p2, s2, report = gmm_suppress(prob, LabelVolume(seg), ScalarVolume(intensity))
    assert not report.condition_applied
    assert p2 is prob and report.voxels_zeroed == 0
    assert np.array_equal(s2.data, seg)


def test_suppress_preconditions():
    prob, seg, intensity = bimodal_volumes()
    empty = LabelVolume(np.zeros(seg.dims, np.float32))
    with pytest.raises(ValueError, match="foreground"):
        gmm_suppress(prob, empty, intensity)
    small = ScalarVolume(np.zeros((8, 8, 8), np.float32))
    with pytest.raises(ValueError, match="geometries"):
        gmm_suppress(prob, seg, small)


def test_report_json_keys():
    prob, seg, intensity = bimodal_volumes()
    _, _, report = gmm_suppress(prob, seg, intensity)
    keys = set(report.as_dict())
    assert keys == {
        "mu1", "sigma1", "w1", "mu2", "sigma2", "w2", "loglik", "iterations",
        "condition_applied", "voxels_zeroed", "components_before", "components_after",
    }


# --- morphology -------------------------------------------------------------

def test_cube_opening_matches_oracle():
    cube = np.zeros((12, 12, 12), bool)
    cube[2:10, 2:10, 2:10] = True
    out = open3d(as_label(cube), 2)
    expect = ref_open(cube, 2)
    assert np.array_equal(out.as_bool(), expect)
    # cross element: faces restored, corners chamfered
    assert out.data[2, 5, 5] == 1 and out.data[2, 2, 2] == 0


def test_single_voxel_removed_by_opening():
    m = np.zeros((5, 5, 5), bool)
    m[2, 2, 2] = True
    assert open3d(as_label(m), 1).foreground_count == 0


def test_empty_and_full_masks():
    empty = as_label(np.zeros((6, 6, 6), bool))
    full = as_label(np.ones((6, 6, 6), bool))
    assert open3d(empty, 2).foreground_count == 0
    assert close3d(empty, 1).foreground_count == 0
    assert close3d(full, 1).foreground_count == 6**3


def test_closing_fills_hole():
    m = np.zeros((9, 9, 9), bool)
    m[2:7, 2:7, 2:7] = True
    m[4, 4, 4] = False
    out = close3d(as_label(m), 1)
    assert np.array_equal(out.as_bool(), ref_close(m, 1))
    assert out.data[4, 4, 4] == 1


def random_masks(count, dims=(16, 16, 16)):
    rng = np.random.default_rng(77)
    from scipy import ndimage as ndi

    for i in range(count):
        density = (0.2, 0.5, 0.8)[i % 3]
        raw = rng.random(dims)
        if i % 2:
            raw = ndi.uniform_filter(raw, size=3)
        yield raw > (1 - density)


def test_morphology_matches_oracle_on_random_masks():
    for idx, mask in enumerate(random_masks(8)):
        iterations = 1 + idx % 2
        assert np.array_equal(
            open3d(as_label(mask), iterations).as_bool(), ref_open(mask, iterations)
        )
        assert np.array_equal(
            close3d(as_label(mask), iterations).as_bool(), ref_close(mask, iterations)
        )


def test_morphology_properties():
    for mask in random_masks(6):
        m = as_label(mask)
        o = open3d(m, 1)
        c = close3d(m, 1)
        assert (o.data <= m.data).all()  # anti-extensive
        assert (m.data <= c.data).all()  # extensive
        assert np.array_equal(open3d(o, 1).data, o.data)  # idempotent
        assert np.array_equal(close3d(c, 1).data, c.data)


# --- largest component ------------------------------------------------------

def ref_components(mask):
    """BFS labeling with 26-connectivity, independent of scipy."""
    nx, ny, nz = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not mask[i, j, k] or seen[i, j, k]:
                    continue
                stack = [(i, j, k)]
                seen[i, j, k] = True
                comp = []
                while stack:
                    a, b, c = stack.pop()
                    comp.append((a, b, c))
                    for da in (-1, 0, 1):
                        for db in (-1, 0, 1):
                            for dc in (-1, 0, 1):
                                x, y, z = a + da, b + db, c + dc
                                if (0 <= x < nx and 0 <= y < ny and 0 <= z < nz
                                        and mask[x, y, z] and not seen[x, y, z]):
                                    seen[x, y, z] = True
                                    stack.append((x, y, z))
                comps.append(comp)
    return comps


def test_largest_component_keeps_biggest():
    m = np.zeros((20, 20, 20), bool)
    m[2:4, 2:7, 2:3] = True   # 10 voxels
    m[10:15, 10:11, 10:11] = True  # 5 voxels
    out = largest_component(as_label(m))
    comps = sorted(ref_components(m), key=len)
    expect = np.zeros_like(m)
    for v in comps[-1]:
        expect[v] = True
    assert np.array_equal(out.as_bool(), expect)


def test_largest_component_single_blob_and_empty():
    m = np.zeros((8, 8, 8), bool)
    m[2:5, 2:5, 2:5] = True
    assert np.array_equal(largest_component(as_label(m)).as_bool(), m)
    assert largest_component(as_label(np.zeros((4, 4, 4), bool))).foreground_count == 0


def test_largest_component_tie_break_prefers_center():
    m = np.zeros((20, 20, 20), bool)
    m[1:3, 1:3, 1:3] = True      # cornered, 8 voxels
    m[9:11, 9:11, 9:11] = True   # centered, 8 voxels
    out = largest_component(as_label(m))
    assert out.data[9, 9, 9] == 1 and out.data[1, 1, 1] == 0
    assert out.foreground_count == 8


def test_largest_component_output_is_single_component_subset():
    for mask in random_masks(4):
        out = largest_component(as_label(mask))
        if out.foreground_count == 0:
            continue
        assert (out.data <= mask).all()
        assert count_components(out) == 1


# --- pipeline ---------------------------------------------------------------

def test_pipeline_removes_distractor(distractor_phantom):
    intensity, label, dlabel, prob = distractor_phantom
    seg = LabelVolume((prob.data >= 0.5).astype(np.float32), prob.spacing, prob.origin)
    mask, prob2, report = refine_pipeline(prob, seg, intensity)
    assert report.components_before >= 2
    assert report.components_after == 1
    assert not np.logical_and(mask.as_bool(), dlabel.as_bool()).any()
    assert (prob2.data <= prob.data).all()


def test_pipeline_clean_input_is_open_close():
    rng = np.random.default_rng(2)
    dims = (16, 16, 16)
    seg = np.zeros(dims, np.float32)
    seg[4:12, 4:12, 4:12] = 1
    intensity = np.full(dims, 60.0, np.float32)
    intensity[seg == 1] = (150 + rng.normal(0, 2, 512)).astype(np.float32)
    prob = ProbabilityVolume(np.where(seg == 1, 0.95, 0.05).astype(np.float32))
    mask, prob2, report = refine_pipeline(
        prob, LabelVolume(seg), ScalarVolume(intensity)
    )
    assert not report.condition_applied
    expect = ref_close(ref_open(seg > 0, 2), 2)
    assert np.array_equal(mask.as_bool(), expect)
    assert np.array_equal(prob2.data, prob.data)


def test_pipeline_empty_seg_error():
    dims = (12, 12, 12)
    prob = ProbabilityVolume(np.zeros(dims, np.float32))
    seg = LabelVolume(np.zeros(dims, np.float32))
    intensity = ScalarVolume(np.zeros(dims, np.float32))
    with pytest.raises(ValueError):
        refine_pipeline(prob, seg, intensity)
