import numpy as np
import pytest
import torch
from click.testing import CliRunner

from madbal import mdbt
from madbal import uncertainty as _unc
from madbal.rounds import seed_pool
from madbal.selection import boundary_mask
from madbal.session import init_session, load_session
from madbal.uncertainty import HeadOutputs

from madbal_adapter.cli import main as cli_main
from madbal_adapter.dataset import generate_dataset
from madbal_adapter.export import export_session_tensors
from madbal_adapter.net import (ToyNet, load_checkpoint, parameter_count,
                                save_checkpoint)
from madbal_adapter.predict import predict_probs
from madbal_adapter.train import (phase2_objective, train_full, train_phase1,
                                  train_phase2)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A small session with a model trained through both phases + export."""
    root = tmp_path_factory.mktemp("sess") / "s"
    images, gt = generate_dataset(6, 32, 5, seed=2)
    sess = init_session(root, images, num_classes=5, per_image_budget=4, gt=gt)
    seed_pool(sess, 25, seed=3)
    model = train_phase1(sess, seed=0, epochs=12, lr=0.05)
    model = train_phase2(sess, model, seed=1, epochs=20, lr=0.15)
    export_session_tensors(sess, model)
    return sess, model


# ---- dataset ----

def test_dataset_deterministic():
    a_img, a_gt = generate_dataset(3, 32, 5, seed=11)
    b_img, b_gt = generate_dataset(3, 32, 5, seed=11)
    assert sorted(a_img) == ["im000", "im001", "im002"]
    for k in a_img:
        assert np.array_equal(a_img[k], b_img[k])
        assert np.array_equal(a_gt[k], b_gt[k])


def test_dataset_classes_and_dtypes():
    images, gt = generate_dataset(4, 48, 5, seed=0)
    for k in images:
        assert images[k].dtype == np.uint8 and images[k].shape == (48, 48, 3)
        assert gt[k].min() >= 0 and gt[k].max() < 5
    all_classes = np.unique(np.concatenate([g.ravel() for g in gt.values()]))
    assert len(all_classes) >= 4     # background plus most shape classes


def test_dataset_rejects_class_count():
    with pytest.raises(ValueError):
        generate_dataset(1, 32, 3, seed=0)


# ---- network ----

def test_net_parameter_count_and_shapes():
    m = ToyNet(5)
    assert 80_000 <= parameter_count(m) <= 140_000
    out = m(torch.randn(2, 3, 32, 32))
    assert out["final"].shape == (2, 5, 32, 32)
    assert len(out["heads"]) == 3
    for h in out["heads"]:
        assert h.shape == (2, 5, 32, 32)
    assert out["weights"].shape == (2, 3, 32, 32)
    assert out["loss_scores"].shape == (2, 2, 32, 32)


def test_net_weights_sum_to_one():
    m = ToyNet(4)
    w = m(torch.randn(1, 3, 16, 16))["weights"]
    assert torch.all(w >= 0) and torch.all(w <= 1)
    assert torch.allclose(w.sum(dim=1), torch.ones(1, 16, 16), atol=1e-6)


def test_net_aux_flag_and_param_split():
    m = ToyNet(5)
    out = m(torch.randn(1, 3, 16, 16), aux=False)
    assert set(out) == {"final"}
    split = (sum(p.numel() for p in m.mainstream_parameters())
             + sum(p.numel() for p in m.auxiliary_parameters()))
    assert split == parameter_count(m)


def test_checkpoint_roundtrip(tmp_path):
    m = ToyNet(5)
    x = torch.randn(1, 3, 16, 16)
    save_checkpoint(m, tmp_path / "m.pt")
    m2 = load_checkpoint(tmp_path / "m.pt")
    with torch.no_grad():
        assert torch.equal(m(x)["final"], m2(x)["final"])


# ---- phase 1 ----

def test_phase1_loss_decreases(trained):
    sess, _ = trained
    model = train_phase1(sess, seed=5, epochs=10, lr=0.05)
    h = model.phase1_history
    assert len(h) == 10
    assert np.mean(h[5:]) < np.mean(h[:5])
    assert h[-1] < h[0]


def test_phase1_requires_labels(tmp_path):
    images, gt = generate_dataset(2, 16, 5, seed=0)
    sess = init_session(tmp_path / "s", images, 5, 2, gt=gt)
    with pytest.raises(ValueError, match="empty pool"):
        train_phase1(sess, seed=0, epochs=1)


def test_phase1_seed_determinism(trained):
    sess, _ = trained
    a = train_phase1(sess, seed=9, epochs=3, lr=0.05)
    b = train_phase1(sess, seed=9, epochs=3, lr=0.05)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.allclose(pa, pb, atol=1e-6)
    c = train_phase1(sess, seed=10, epochs=3, lr=0.05)
    assert any(not torch.equal(pa, pc) for pa, pc
               in zip(a.state_dict().values(), c.state_dict().values()))


# ---- phase 2 ----

def test_phase2_matches_engine_composite(trained):
    sess, model = trained
    obj = phase2_objective(sess, model)
    logits = np.moveaxis(obj["loss_scores"].astype(np.float64), 1, 0)
    lp = _unc.loss_prediction_loss(logits, obj["loss_labels"], obj["boundary"])
    engine_total = _unc.phase2_loss(lp.center, lp.boundary, obj["seg"])
    assert abs(engine_total - obj["total"]) <= 1e-5


def test_phase2_zero_lambdas_freeze_aux(trained):
    sess, _ = trained
    model = train_phase1(sess, seed=4, epochs=2, lr=0.05)
    before = [p.detach().clone() for p in model.auxiliary_parameters()]
    train_phase2(sess, model, seed=5, epochs=3, lambdas=(0, 0, 0, 0, 0))
    after = list(model.auxiliary_parameters())
    assert all(torch.equal(a, b) for a, b in zip(before, after))


def test_phase2_mainstream_frozen_and_targets_fixed(trained):
    sess, _ = trained
    model = train_phase1(sess, seed=6, epochs=3, lr=0.05)
    main_before = [p.detach().clone() for p in model.mainstream_parameters()]
    train_phase2(sess, model, seed=7, epochs=4, lr=0.05)
    for a, b in zip(main_before, model.mainstream_parameters()):
        assert torch.equal(a, b)
    # mainstream unchanged, so targets recomputed now equal the stored ones
    obj = phase2_objective(sess, model)
    assert np.array_equal(obj["loss_labels"].labels,
                          model.phase2_loss_labels.labels)
    assert np.array_equal(obj["boundary"], model.phase2_boundary)


def test_phase2_sigmoid_spans_both_halves(trained):
    _, model = trained
    sess, _ = trained
    obj = phase2_objective(sess, model)
    sig = 1.0 / (1.0 + np.exp(-obj["loss_scores"].astype(np.float64)))
    assert np.isfinite(obj["loss_scores"]).all()
    assert sig.min() < 0.5 < sig.max()


# ---- prediction and export ----

def test_predict_probs_shapes(trained):
    _, model = trained
    images, _ = generate_dataset(2, 32, 5, seed=8)
    probs = predict_probs(model, [images[k] for k in sorted(images)])
    assert len(probs) == 2
    for p in probs:
        assert p.shape == (5, 32, 32) and p.dtype == np.float32
        assert np.allclose(p.sum(axis=0), 1.0, atol=1e-4)


def test_export_passes_engine_validation(trained):
    sess, _ = trained
    for image_id in sess.manifest.image_ids:
        ho = HeadOutputs.load(sess.image_dir(image_id))
        ho.validate()


def test_export_boundary_matches_engine_rule(trained):
    sess, _ = trained
    for image_id in sess.manifest.image_ids:
        d = sess.image_dir(image_id)
        probs = mdbt.read_tensor(d / "probs_final.mdbt")
        bnd = mdbt.read_tensor(d / "boundary.mdbt")
        pred = probs.argmax(axis=0).astype(np.int32)
        assert np.array_equal(bnd, boundary_mask(pred))


def test_export_readback_matches_model(trained):
    sess, model = trained
    image_id = sess.manifest.image_ids[0]
    from madbal.rounds import load_image
    x = torch.from_numpy(np.array(load_image(sess, image_id)))
    x = x.permute(2, 0, 1).float().unsqueeze(0) / 255.0
    with torch.no_grad():
        out = model(x)
        want = torch.softmax(out["final"], dim=1)[0].numpy().astype(np.float32)
    got = mdbt.read_tensor(sess.image_dir(image_id) / "probs_final.mdbt")
    assert np.array_equal(got, want)


def test_train_full_skips_phase2_without_export(tmp_path):
    images, gt = generate_dataset(2, 16, 5, seed=1)
    sess = init_session(tmp_path / "s", images, 5, 2, gt=gt)
    seed_pool(sess, 8, seed=0)
    model = train_full(sess, seed=0, phase1_epochs=2, phase2_epochs=2,
                       export=False)
    assert not hasattr(model, "phase2_history")
    assert not (sess.image_dir("im000") / "probs_final.mdbt").exists()
    model = train_full(sess, seed=0, phase1_epochs=2, phase2_epochs=2)
    assert hasattr(model, "phase2_history")
    assert (sess.image_dir("im000") / "probs_final.mdbt").exists()


# ---- CLI ----

def test_cli_synth_train_export(tmp_path):
    runner = CliRunner()
    res = runner.invoke(cli_main, ["synth", "--out", str(tmp_path / "d"),
                                   "--n", "2", "--size", "24", "--seed", "1"])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "d" / "images" / "im001.png").exists()
    assert (tmp_path / "d" / "gt" / "im001.mdbt").exists()

    images, gt = generate_dataset(2, 24, 5, seed=1)
    sess = init_session(tmp_path / "s", images, 5, 2, gt=gt)
    seed_pool(sess, 10, seed=0)
    sdir = str(sess.root)

    res = runner.invoke(cli_main, ["train", "--session", sdir, "--phase", "2",
                                   "--seed", "0"])
    assert res.exit_code != 0          # phase 1 must come first
    res = runner.invoke(cli_main, ["train", "--session", sdir, "--phase", "1",
                                   "--seed", "0", "--epochs", "2"])
    assert res.exit_code == 0, res.output
    assert (sess.root / "adapter" / "phase1.pt").exists()
    res = runner.invoke(cli_main, ["train", "--session", sdir, "--phase", "2",
                                   "--seed", "0", "--epochs", "2"])
    assert res.exit_code == 0, res.output
    assert (sess.root / "adapter" / "phase2.pt").exists()
    res = runner.invoke(cli_main, ["export", "--session", sdir])
    assert res.exit_code == 0, res.output
    sess = load_session(sess.root)
    ho = HeadOutputs.load(sess.image_dir("im000"))
    ho.validate()
