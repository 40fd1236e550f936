"""Shared phantom fixtures; heavyweight pipeline artifacts are session-scoped."""

import os

import numpy as np
import pytest

from deeplogismos.cli import PipelineConfig, run_pipeline
from deeplogismos.phantom import PhantomSpec, add_distractor, make_phantom, simulate_prob
from deeplogismos.volio import LabelVolume, write_metaimage

SPHERE_CENTER = (16, 16, 16)


@pytest.fixture(scope="session")
def sphere_phantom():
    """Clean acceptance sphere: noiseless two-level intensity, noisy probability."""
    spec = PhantomSpec(noise_sigma=0.0, seed=7)
    intensity, label = make_phantom(spec)
    prob = simulate_prob(label, tau=1.0, noise_sigma=0.05, seed=11)
    return intensity, label, prob


@pytest.fixture(scope="session")
def sphere_files(sphere_phantom, tmp_path_factory):
    intensity, label, prob = sphere_phantom
    d = tmp_path_factory.mktemp("sphere")
    paths = {
        "intensity": str(d / "intensity.mha"),
        "label": str(d / "label.mha"),
        "prob": str(d / "prob.mha"),
    }
    write_metaimage(intensity, paths["intensity"])
    write_metaimage(label, paths["label"])
    write_metaimage(prob, paths["prob"])
    return paths


@pytest.fixture(scope="session")
def distractor_phantom():
    """Main sphere plus a dark distractor blob; probability map covers the union."""
    spec = PhantomSpec(noise_sigma=10.0, seed=7)
    intensity, label = make_phantom(spec)
    off = 18.0 / np.sqrt(2.0)
    intensity, dlabel = add_distractor(
        intensity, label, (off, off, 0.0), radius_mm=8.0,
        intensity_mean=35.0, noise_sigma=10.0, seed=5,
    )
    union = LabelVolume(np.maximum(label.data, dlabel.data), label.spacing, label.origin)
    prob = simulate_prob(union, tau=1.0, noise_sigma=0.05, seed=11)
    return intensity, label, dlabel, prob


@pytest.fixture(scope="session")
def distractor_files(distractor_phantom, tmp_path_factory):
    intensity, label, dlabel, prob = distractor_phantom
    d = tmp_path_factory.mktemp("distractor")
    paths = {
        "intensity": str(d / "intensity.mha"),
        "label": str(d / "label.mha"),
        "distractor": str(d / "distractor.mha"),
        "prob": str(d / "prob.mha"),
    }
    write_metaimage(intensity, paths["intensity"])
    write_metaimage(label, paths["label"])
    write_metaimage(dlabel, paths["distractor"])
    write_metaimage(prob, paths["prob"])
    return paths


@pytest.fixture(scope="session")
def sphere_run(sphere_files, tmp_path_factory):
    """One default-config pipeline run on the clean sphere, reused across tests."""
    out = str(tmp_path_factory.mktemp("sphere_run") / "mask.mha")
    mask, report = run_pipeline(
        sphere_files["intensity"], sphere_files["prob"], SPHERE_CENTER,
        PipelineConfig(), out,
    )
    return {"mask": mask, "report": report, "out_path": out}


@pytest.fixture(scope="session")
def golden_file():
    return os.path.join(os.path.dirname(__file__), "data", "golden.mha")
