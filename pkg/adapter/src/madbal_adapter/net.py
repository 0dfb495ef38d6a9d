"""Small encoder-decoder with varied-maturity heads and auxiliary modules.

Four encoder stages; auxiliary heads tap stages 1-3 (shallow, semi, almost
mature) while the decoder output feeds the fully mature head.  A weight block
turns the pooled stage features into three per-pixel weights (softmax, so
they sum to 1), and the loss module reads the same features reweighted by
those maps and emits center/boundary error logits.
"""

import torch
import torch.nn.functional as F
from torch import nn

DEFAULT_WIDTHS = (12, 24, 36, 48)


def _gn_groups(ch):
    for g in (4, 3, 2):
        if ch % g == 0:
            return g
    return 1


def _block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.GroupNorm(_gn_groups(cout), cout),
        nn.ReLU(inplace=True),
    )


class ToyNet(nn.Module):
    def __init__(self, num_classes: int, widths=DEFAULT_WIDTHS):
        super().__init__()
        w1, w2, w3, w4 = widths
        self.num_classes = num_classes
        self.widths = tuple(widths)
        self.enc1 = nn.Sequential(_block(3, w1), _block(w1, w1))
        self.enc2 = nn.Sequential(_block(w1, w2, stride=2), _block(w2, w2))
        self.enc3 = nn.Sequential(_block(w2, w3, stride=2), _block(w3, w3))
        self.enc4 = nn.Sequential(_block(w3, w4, stride=2), _block(w4, w4))
        self.dec3 = _block(w4, w3)
        self.dec2 = _block(w3, w2)
        self.dec1 = _block(w2, w1)
        self.final_head = nn.Conv2d(w1, num_classes, 1)
        self.aux_heads = nn.ModuleList([
            nn.Conv2d(w1, num_classes, 1),
            nn.Conv2d(w2, num_classes, 1),
            nn.Conv2d(w3, num_classes, 1),
        ])
        fdim = w1 + w2 + w3
        self.weight_block = nn.Sequential(_block(fdim, 18),
                                          nn.Conv2d(18, 3, 1))
        self.loss_module = nn.Sequential(_block(fdim, 18),
                                         nn.Conv2d(18, 2, 1))

    def mainstream_parameters(self):
        for m in (self.enc1, self.enc2, self.enc3, self.enc4,
                  self.dec3, self.dec2, self.dec1, self.final_head):
            yield from m.parameters()

    def auxiliary_parameters(self):
        for m in (self.aux_heads, self.weight_block, self.loss_module):
            yield from m.parameters()

    def forward(self, x, aux: bool = True):
        """aux=False skips the side heads and auxiliary modules; phase 1
        only trains the mainstream and the skipped branch is not cheap."""
        size = x.shape[-2:]
        f1 = self.enc1(x)
        f2 = self.enc2(f1)
        f3 = self.enc3(f2)
        f4 = self.enc4(f3)

        def up(t, ref):
            return F.interpolate(t, size=ref, mode="bilinear",
                                 align_corners=False)

        d3 = self.dec3(up(f4, f3.shape[-2:])) + f3
        d2 = self.dec2(up(d3, f2.shape[-2:])) + f2
        d1 = self.dec1(up(d2, size)) + f1
        final = self.final_head(d1)
        if not aux:
            return {"final": final}

        heads = [self.aux_heads[0](f1),
                 up(self.aux_heads[1](f2), size),
                 up(self.aux_heads[2](f3), size)]

        u2 = up(f2, size)
        u3 = up(f3, size)
        feats = torch.cat([f1, u2, u3], dim=1)
        weights = torch.softmax(self.weight_block(feats), dim=1)
        reweighted = torch.cat([f1 * weights[:, 0:1],
                                u2 * weights[:, 1:2],
                                u3 * weights[:, 2:3]], dim=1)
        loss_scores = self.loss_module(reweighted)
        return {"final": final, "heads": heads, "weights": weights,
                "loss_scores": loss_scores}


def parameter_count(model) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: ToyNet, path) -> None:
    torch.save({"state": model.state_dict(),
                "num_classes": model.num_classes,
                "widths": model.widths}, path)


def load_checkpoint(path) -> ToyNet:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = ToyNet(blob["num_classes"], blob["widths"])
    model.load_state_dict(blob["state"])
    return model
