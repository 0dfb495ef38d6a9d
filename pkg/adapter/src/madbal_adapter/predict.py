"""Inference helpers."""

import numpy as np
import torch

from .net import ToyNet


def predict_probs(model: ToyNet, images) -> list:
    """Softmax class probabilities for a list of uint8 RGB images.

    Returns one [C,H,W] float32 array per input image.
    """
    model.eval()
    out = []
    with torch.no_grad():
        for img in images:
            x = torch.from_numpy(np.array(img)).permute(2, 0, 1)
            x = x.float().unsqueeze(0) / 255.0
            probs = torch.softmax(model(x)["final"], dim=1)[0]
            out.append(probs.numpy().astype(np.float32))
    return out
