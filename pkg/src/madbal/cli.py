"""Command line entry points for driving a session end to end."""

from __future__ import annotations

import glob as globlib
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from madbal import mdbt, rounds, session as session_mod
from madbal.selection import SelectionMode

MODE_CHOICES = [m.value for m in SelectionMode]


def _load_session(session_dir):
    try:
        return session_mod.load_session(Path(session_dir))
    except FileNotFoundError as e:
        raise click.ClickException(str(e))


def _read_gt_file(path: Path) -> np.ndarray:
    if path.suffix == ".mdbt":
        return mdbt.read_tensor(path).astype(np.int32)
    return np.asarray(Image.open(path).convert("L")).astype(np.int32)


@click.group()
def main():
    """Budgeted active-learning selection for semantic segmentation."""


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path())
@click.option("--images", "images_glob", required=True,
              help="Glob of input PNG images; the stem becomes the image id.")
@click.option("--gt-dir", type=click.Path(exists=True, file_okay=False),
              default=None,
              help="Directory with <id>.mdbt or <id>.png ground-truth maps.")
@click.option("--classes", "num_classes", required=True, type=int)
@click.option("--budget", "per_image_budget", required=True, type=int)
@click.option("--class-names", default=None,
              help="Comma-separated class names.")
@click.option("--mode", default="madbal", type=click.Choice(MODE_CHOICES))
def init(session_dir, images_glob, gt_dir, num_classes, per_image_budget,
         class_names, mode):
    """Create a session directory from a set of images."""
    paths = sorted(globlib.glob(images_glob))
    if not paths:
        raise click.ClickException(f"no images match {images_glob!r}")
    images = {}
    for p in paths:
        p = Path(p)
        images[p.stem] = np.asarray(Image.open(p).convert("RGB"))
    gt = None
    if gt_dir is not None:
        gt = {}
        for image_id in images:
            for cand in (Path(gt_dir) / f"{image_id}.mdbt",
                         Path(gt_dir) / f"{image_id}.png"):
                if cand.exists():
                    gt[image_id] = _read_gt_file(cand)
                    break
            else:
                raise click.ClickException(f"no ground truth found for {image_id}")
    names = class_names.split(",") if class_names else None
    try:
        sess = session_mod.init_session(
            Path(session_dir), images, num_classes=num_classes,
            per_image_budget=per_image_budget, gt=gt, class_names=names,
            mode=mode)
    except (FileExistsError, ValueError) as e:
        raise click.ClickException(str(e))
    click.echo(f"initialized session with {len(sess.manifest.image_ids)} images "
               f"at {session_dir}")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--n", "n_per_image", required=True, type=int)
@click.option("--seed", default=0, type=int, show_default=True)
def seed(session_dir, n_per_image, seed):
    """Label random seed pixels from ground truth."""
    sess = _load_session(session_dir)
    try:
        records = rounds.seed_pool(sess, n_per_image, seed)
    except (ValueError, FileNotFoundError) as e:
        raise click.ClickException(str(e))
    click.echo(f"seeded {len(records)} labels")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--compactness", default=10.0, type=float, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--clusters", "n_clusters", default=rounds.DEFAULT_CLUSTERS,
              type=int, show_default=True)
def superpixels(session_dir, compactness, seed, n_clusters):
    """Segment every image and cluster the superpixels for this round."""
    sess = _load_session(session_dir)
    try:
        maps = rounds.ensure_superpixels(sess, compactness=compactness, seed=seed)
        clusters = rounds.cluster_superpixels(sess, maps, n_clusters, seed)
    except ValueError as e:
        raise click.ClickException(str(e))
    total = sum(m.count for m in maps.values())
    click.echo(f"{total} superpixels over {len(maps)} images, "
               f"{n_clusters} clusters (round {sess.manifest.round_index})")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--mode", required=True, type=click.Choice(MODE_CHOICES))
@click.option("--clusters", "n_clusters", default=rounds.DEFAULT_CLUSTERS,
              type=int, show_default=True)
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--compactness", default=10.0, type=float, show_default=True)
def select(session_dir, mode, n_clusters, seed, compactness):
    """Select this round's query pixels and write queries.json."""
    sess = _load_session(session_dir)
    try:
        qs, report, _, _ = rounds.select_round(
            sess, SelectionMode(mode), seed, n_clusters=n_clusters,
            compactness=compactness)
    except (ValueError, FileNotFoundError) as e:
        raise click.ClickException(str(e))
    click.echo(f"round {sess.manifest.round_index}: "
               f"{len(qs.queries)} queries (B_t={report.b_t})")


@main.command(name="round")
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--mode", required=True, type=click.Choice(MODE_CHOICES))
@click.option("--oracle", required=True,
              type=click.Choice([o.value for o in rounds.OracleKind]))
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--clusters", "n_clusters", default=rounds.DEFAULT_CLUSTERS,
              type=int, show_default=True)
@click.option("--compactness", default=10.0, type=float, show_default=True)
def round_cmd(session_dir, mode, oracle, seed, n_clusters, compactness):
    """Run one full round: select, label, append, report."""
    sess = _load_session(session_dir)
    try:
        report = rounds.run_round(
            sess, SelectionMode(mode), rounds.OracleKind(oracle), seed,
            n_clusters=n_clusters, compactness=compactness)
    except (ValueError, FileNotFoundError, KeyError) as e:
        raise click.ClickException(str(e))
    if report.pending:
        click.echo(f"round {report.round}: {report.queries_issued} queries "
                   "pending human labels (run `madbal serve`)")
    else:
        miou_txt = "n/a" if report.miou is None else f"{report.miou:.4f}"
        click.echo(f"round {report.round}: {report.labels_received} labels, "
                   f"pool {report.pool_size_after}, mIoU {miou_txt}")


@main.command(name="eval")
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--pred", "pred_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory with <id>.mdbt predicted class maps.")
def eval_cmd(session_dir, pred_dir):
    """Print mean IoU of a prediction directory against session ground truth."""
    sess = _load_session(session_dir)
    preds, gts = [], []
    for image_id in sess.manifest.image_ids:
        path = Path(pred_dir) / f"{image_id}.mdbt"
        if not path.exists():
            raise click.ClickException(f"missing prediction {path}")
        preds.append(mdbt.read_tensor(path))
        gts.append(rounds.load_gt(sess, image_id))
    try:
        score = rounds.miou(preds, gts, sess.manifest.num_classes)
    except ValueError as e:
        raise click.ClickException(str(e))
    click.echo(f"mIoU {score:.6f}")


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8787, type=int, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(session_dir, port, host):
    """Serve the annotation HTTP API for human-oracle rounds."""
    import uvicorn

    from madbal.service import build_app

    sess = _load_session(session_dir)
    uvicorn.run(build_app(sess), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
