"""Training data fixtures: phantom volumes produced by the segmentation
pipeline's own `phantom` subcommand, so all data flows through the shared
MetaImage file contract."""

import json
import subprocess
import sys

import pytest

PHANTOM_COUNT = 30


def make_phantom_dir(out_dir, seed, radius, center, fg=180.0, bg=60.0,
                     noise=10.0, prob_noise=0.05):
    spec = {
        "dims": [32, 32, 32],
        "spacing": [1.0, 1.0, 1.0],
        "shape": "sphere",
        "center_mm": list(center),
        "radii_mm": [radius] * 3,
        "fg_mean": fg,
        "bg_mean": bg,
        "noise_sigma": noise,
        "seed": seed,
        "prob": {"tau_mm": 1.0, "noise_sigma": prob_noise, "seed": seed + 1000},
    }
    spec_path = out_dir / f"spec_{seed}.json"
    spec_path.write_text(json.dumps(spec))
    target = out_dir / f"phantom_{seed:03d}"
    subprocess.run(
        [sys.executable, "-m", "deeplogismos.cli", "phantom",
         "--spec", str(spec_path), "--out", str(target)],
        check=True, capture_output=True,
    )
    return target


@pytest.fixture(scope="session")
def phantom_dataset(tmp_path_factory):
    """30 training phantoms with varied radii/centers/contrast."""
    root = tmp_path_factory.mktemp("train_data")
    radii = (5.0, 6.0, 7.0, 8.0, 9.0)
    offsets = ((16, 16, 16), (14, 16, 17), (17, 15, 16), (16, 18, 15), (15, 15, 15))
    for i in range(PHANTOM_COUNT):
        make_phantom_dir(
            root,
            seed=100 + i,
            radius=radii[i % len(radii)],
            center=offsets[(i // len(radii)) % len(offsets)],
            fg=170.0 + 4.0 * (i % 4),
            bg=55.0 + 3.0 * (i % 3),
        )
    return root


@pytest.fixture(scope="session")
def heldout_phantom(tmp_path_factory):
    """One phantom kept out of training, used for inference checks."""
    root = tmp_path_factory.mktemp("heldout")
    return make_phantom_dir(root, seed=999, radius=7.0, center=(16, 16, 16))
