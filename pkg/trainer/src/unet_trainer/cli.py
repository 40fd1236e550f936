"""Command-line entry points: train on a phantom directory, infer one volume."""

from __future__ import annotations

import sys

import click

from .data import TrainConfig


@click.group()
def main():
    """Toy-scale contextual UNet: train on phantoms, export probability maps."""


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--context", default=3, show_default=True, type=click.Choice(["1", "3"]))
@click.option("--epochs", default=10, show_default=True)
@click.option("--lr", default=1e-6, show_default=True)
@click.option("--momentum", default=0.9, show_default=True)
@click.option("--batch-size", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
def train_cmd(data_dir, out_dir, context, epochs, lr, momentum, batch_size, seed):
    """Train and write checkpoint.pt plus the per-epoch loss curve."""
    from .train import train

    try:
        config = TrainConfig(
            context=int(context), epochs=epochs, lr=lr, momentum=momentum,
            batch_size=batch_size, seed=seed,
        )
        losses = train(data_dir, out_dir, config)
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"trained {config.epochs} epochs; first {losses[0]:.4f} final {losses[-1]:.4f}")


@main.command("infer")
@click.option("--ckpt", "checkpoint", required=True, type=click.Path(exists=True))
@click.option("--in", "volume_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def infer_cmd(checkpoint, volume_path, out_path):
    """Write the probability volume for one 32x32x32 intensity volume."""
    from .infer import infer

    try:
        infer(checkpoint, volume_path, out_path)
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(out_path)


if __name__ == "__main__":
    main()
