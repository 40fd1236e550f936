import pytest
import torch

from unet_trainer.model import build_model


def test_context_3_shapes():
    model = build_model(3)
    out = model(torch.zeros(2, 3, 32, 32))
    assert out.shape == (2, 1, 32, 32)


def test_context_1_shapes():
    model = build_model(1)
    out = model(torch.zeros(2, 1, 32, 32))
    assert out.shape == (2, 1, 32, 32)


def test_all_zero_input_valid_probabilities():
    model = build_model(3)
    out = model(torch.zeros(1, 3, 32, 32))
    assert torch.isfinite(out).all()
    assert (out >= 0).all() and (out <= 1).all()


def test_invalid_context():
    with pytest.raises(ValueError):
        build_model(2)
