"""Two-phase training on a session's labeled pool.

Phase I fits the mainstream segmentation net with sparse cross entropy on the
pool pixels.  Phase II freezes the mainstream, derives binary loss labels
from the phase-I per-pixel losses, and fits the auxiliary modules (three
side heads, weight block, loss module) against them.
"""

import numpy as np
import torch
import torch.nn.functional as F

from madbal import selection as _sel
from madbal import uncertainty as _unc
from madbal.rounds import load_image
from madbal.session import Session

from .export import export_session_tensors
from .net import ToyNet


def _stack_session(session: Session):
    """Images + sparse labels as dense tensors.

    Returns (ids, x [N,3,H,W] float, cls [N,H,W] int64, mask [N,H,W] bool).
    cls is 0 off the mask, which phase-II code must not read there.
    """
    ids = list(session.manifest.image_ids)
    imgs = np.stack([load_image(session, i) for i in ids])
    x = torch.from_numpy(imgs).permute(0, 3, 1, 2).float() / 255.0
    n, _, h, w = x.shape
    cls = torch.zeros((n, h, w), dtype=torch.int64)
    mask = torch.zeros((n, h, w), dtype=torch.bool)
    for k, image_id in enumerate(ids):
        for rec in session.labels_for(image_id):
            cls[k, rec.row, rec.col] = rec.class_id
            mask[k, rec.row, rec.col] = True
    return ids, x, cls, mask


def _sparse_ce(logits, cls, mask):
    picked = logits.permute(0, 2, 3, 1)[mask]
    return F.cross_entropy(picked, cls[mask])


def _poly_lr(base, step, total, power=0.9):
    return base * (1.0 - step / total) ** power


def _epoch_batches(n, batch_size, generator):
    perm = torch.randperm(n, generator=generator)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def train_phase1(session: Session, seed: int = 0, epochs: int = 60,
                 lr: float = 0.01, momentum: float = 0.9,
                 batch_size: int = 5) -> ToyNet:
    if not session.labels:
        raise ValueError("cannot train on an empty pool, seed some labels first")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    _, x, cls, mask = _stack_session(session)
    model = ToyNet(session.manifest.num_classes)
    opt = torch.optim.SGD(model.mainstream_parameters(), lr=lr,
                          momentum=momentum)
    order = torch.Generator().manual_seed(seed)
    history = []
    model.train()
    for epoch in range(epochs):
        for group in opt.param_groups:
            group["lr"] = _poly_lr(lr, epoch, epochs)
        seen = []
        for idx in _epoch_batches(x.shape[0], batch_size, order):
            if not mask[idx].any():
                continue
            opt.zero_grad()
            out = model(x[idx], aux=False)
            loss = _sparse_ce(out["final"], cls[idx], mask[idx])
            loss.backward()
            opt.step()
            seen.append(float(loss.detach()))
        history.append(sum(seen) / max(len(seen), 1))
    model.eval()
    model.phase1_history = history
    return model


def _masked_bce(logits, labels, sel):
    """Mean BCE over the selected pixels; an empty selection contributes 0."""
    if sel.any():
        return F.binary_cross_entropy_with_logits(logits[sel], labels[sel])
    return logits.sum() * 0.0


def derive_loss_targets(model: ToyNet, x, cls, mask, num_classes: int):
    """Binary loss labels and boundary maps from the current mainstream state."""
    with torch.no_grad():
        out = model(x, aux=False)
        logp = F.log_softmax(out["final"], dim=1)
        perpix = -logp.gather(1, cls.unsqueeze(1)).squeeze(1)
        pred = out["final"].argmax(dim=1).numpy().astype(np.int32)
    ll = _unc.loss_labels(perpix.numpy(), cls.numpy(), mask.numpy(),
                          num_classes)
    bnd = np.stack([_sel.boundary_mask(p) for p in pred])
    return ll, bnd


def _phase2_terms(out, cls, mask, labels_t, defined_t, bnd_t):
    scores = out["loss_scores"]
    l_c = _masked_bce(scores[:, 0], labels_t, defined_t & ~bnd_t)
    l_b = _masked_bce(scores[:, 1], labels_t, defined_t & bnd_t)
    seg = [_sparse_ce(h, cls, mask) for h in out["heads"]]
    return l_c, l_b, seg


def phase2_objective(session: Session, model: ToyNet,
                     lambdas=_unc.DEFAULT_LAMBDAS) -> dict:
    """Recompute the phase-II objective terms at the current weights.

    With the mainstream frozen during phase II the derived targets here match
    the ones used in training, so this doubles as a consistency probe.
    """
    _, x, cls, mask = _stack_session(session)
    ll, bnd = derive_loss_targets(model, x, cls, mask,
                                  session.manifest.num_classes)
    labels_t = torch.from_numpy(ll.labels.astype(np.float32))
    defined_t = torch.from_numpy(ll.defined_mask)
    bnd_t = torch.from_numpy(bnd.astype(bool))
    lambdas = tuple(float(v) for v in lambdas)
    with torch.no_grad():
        out = model(x)
        l_c, l_b, seg = _phase2_terms(out, cls, mask, labels_t, defined_t,
                                      bnd_t)
        total = (lambdas[0] * l_c + lambdas[1] * l_b
                 + lambdas[2] * seg[0] + lambdas[3] * seg[1]
                 + lambdas[4] * seg[2])
    return {"l_c": float(l_c), "l_b": float(l_b),
            "seg": [float(s) for s in seg], "total": float(total),
            "loss_labels": ll, "boundary": bnd,
            "loss_scores": out["loss_scores"].numpy()}


def train_phase2(session: Session, model: ToyNet, seed: int = 0,
                 epochs: int = 15, lr: float = 0.01, momentum: float = 0.9,
                 lambdas=_unc.DEFAULT_LAMBDAS, batch_size: int = 5) -> ToyNet:
    if not session.labels:
        raise ValueError("cannot train on an empty pool, seed some labels first")
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    _, x, cls, mask = _stack_session(session)
    num_classes = session.manifest.num_classes

    for p in model.mainstream_parameters():
        p.requires_grad_(False)
    model.eval()

    # loss labels come from the phase-I state and stay fixed for all epochs
    ll, bnd = derive_loss_targets(model, x, cls, mask, num_classes)
    labels_t = torch.from_numpy(ll.labels.astype(np.float32))
    defined_t = torch.from_numpy(ll.defined_mask)
    bnd_t = torch.from_numpy(bnd.astype(bool))

    lambdas = tuple(float(v) for v in lambdas)
    opt = torch.optim.SGD([p for p in model.auxiliary_parameters()],
                          lr=lr, momentum=momentum)
    order = torch.Generator().manual_seed(seed)
    history = []
    for epoch in range(epochs):
        for group in opt.param_groups:
            group["lr"] = _poly_lr(lr, epoch, epochs)
        seen = []
        for idx in _epoch_batches(x.shape[0], batch_size, order):
            if not mask[idx].any():
                continue
            opt.zero_grad()
            out = model(x[idx])
            l_c, l_b, seg = _phase2_terms(out, cls[idx], mask[idx],
                                          labels_t[idx], defined_t[idx],
                                          bnd_t[idx])
            loss = (lambdas[0] * l_c + lambdas[1] * l_b
                    + lambdas[2] * seg[0] + lambdas[3] * seg[1]
                    + lambdas[4] * seg[2])
            loss.backward()
            opt.step()
            seen.append(float(loss.detach()))
        history.append(sum(seen) / max(len(seen), 1))
    model.eval()
    model.phase2_history = history
    model.phase2_loss_labels = ll
    model.phase2_boundary = bnd
    return model


def train_full(session: Session, seed: int = 0, phase1_epochs: int = 60,
               phase2_epochs: int = 15, export: bool = True,
               lr: float = 0.01) -> ToyNet:
    """Phase I, then phase II and a tensor export.

    The auxiliary fit only matters for the exported tensors, so with
    export=False it is skipped and the returned model is the phase-I one.
    """
    model = train_phase1(session, seed=seed, epochs=phase1_epochs, lr=lr)
    if export:
        model = train_phase2(session, model, seed=seed + 1,
                             epochs=phase2_epochs, lr=lr)
        export_session_tensors(session, model)
    return model
