"""Write per-image model tensors into a session directory."""

import numpy as np
import torch

from madbal import mdbt
from madbal.rounds import load_image
from madbal.selection import boundary_mask
from madbal.session import Session


def export_session_tensors(session: Session, model) -> None:
    """Run the model on every session image and persist its outputs.

    Writes probs_final, probs_head1..3, weights, loss_scores and boundary
    next to each image; the selection machinery reads them from there.
    """
    model.eval()
    for image_id in session.manifest.image_ids:
        img = load_image(session, image_id)
        x = torch.from_numpy(np.array(img)).permute(2, 0, 1).float().unsqueeze(0) / 255.0
        with torch.no_grad():
            out = model(x)
            final = torch.softmax(out["final"], dim=1)[0].numpy()
            heads = [torch.softmax(h, dim=1)[0].numpy() for h in out["heads"]]
            weights = out["weights"][0].numpy()
            scores = out["loss_scores"][0].numpy()
        d = session.image_dir(image_id)
        final = final.astype(np.float32)
        mdbt.write_tensor(d / "probs_final.mdbt", final)
        for k, h in enumerate(heads, start=1):
            mdbt.write_tensor(d / f"probs_head{k}.mdbt", h.astype(np.float32))
        mdbt.write_tensor(d / "weights.mdbt", weights.astype(np.float32))
        mdbt.write_tensor(d / "loss_scores.mdbt", scores.astype(np.float32))
        pred = final.argmax(axis=0).astype(np.int32)
        mdbt.write_tensor(d / "boundary.mdbt", boundary_mask(pred))
