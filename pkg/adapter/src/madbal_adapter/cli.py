"""Command line entry points for the adapter."""

import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from madbal import mdbt
from madbal.session import load_session

from . import dataset, net
from .export import export_session_tensors
from .train import train_phase1, train_phase2


def _ckpt_dir(session) -> Path:
    d = session.root / "adapter"
    d.mkdir(exist_ok=True)
    return d


@click.group()
def main():
    """Toy segmentation model for annotation sessions."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=10, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--classes", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out, n, size, classes, seed):
    """Generate a synthetic shapes dataset as PNGs plus gt tensors."""
    images, gt = dataset.generate_dataset(n, size, classes, seed=seed)
    root = Path(out)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    for image_id in sorted(images):
        Image.fromarray(images[image_id], mode="RGB").save(
            root / "images" / f"{image_id}.png")
        mdbt.write_tensor(root / "gt" / f"{image_id}.mdbt", gt[image_id])
    click.echo(f"wrote {len(images)} images to {root}")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path())
@click.option("--phase", type=click.Choice(["1", "2"]), required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--epochs", default=None, type=int,
              help="override the per-phase default (60 or 15)")
def train(session_dir, phase, seed, epochs):
    """Train one phase; phase 2 resumes from the phase 1 checkpoint."""
    try:
        sess = load_session(session_dir)
        ckpt = _ckpt_dir(sess)
        if phase == "1":
            model = train_phase1(sess, seed=seed,
                                 epochs=60 if epochs is None else epochs)
            net.save_checkpoint(model, ckpt / "phase1.pt")
            click.echo(f"phase 1 done, loss {model.phase1_history[-1]:.4f}")
        else:
            path = ckpt / "phase1.pt"
            if not path.exists():
                raise click.ClickException(
                    "no phase1.pt checkpoint, run phase 1 first")
            model = net.load_checkpoint(path)
            model = train_phase2(sess, model, seed=seed,
                                 epochs=15 if epochs is None else epochs)
            net.save_checkpoint(model, ckpt / "phase2.pt")
            click.echo(f"phase 2 done, loss {model.phase2_history[-1]:.4f}")
    except (FileNotFoundError, ValueError) as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path())
def export(session_dir):
    """Write model tensors for every session image from the latest checkpoint."""
    try:
        sess = load_session(session_dir)
        ckpt = _ckpt_dir(sess)
        path = ckpt / "phase2.pt"
        if not path.exists():
            path = ckpt / "phase1.pt"
        if not path.exists():
            raise click.ClickException("no checkpoint, run train first")
        model = net.load_checkpoint(path)
        export_session_tensors(sess, model)
        click.echo(f"exported tensors for "
                   f"{len(sess.manifest.image_ids)} images")
    except (FileNotFoundError, ValueError) as exc:
        raise click.ClickException(str(exc))


if __name__ == "__main__":
    sys.exit(main())
