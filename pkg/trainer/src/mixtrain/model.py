"""Q network: a plain MLP over the flat observation vector."""

from __future__ import annotations

import torch
from torch import nn


class QNet(nn.Module):
    """State-action values for the two tokens, Stop (0) and Go (1)."""

    def __init__(self, obs_dim: int, hidden: tuple[int, ...] = (512, 512, 512)):
        super().__init__()
        layers: list[nn.Module] = []
        prev = obs_dim
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU()]
            prev = width
        layers.append(nn.Linear(prev, 2))
        self.net = nn.Sequential(*layers)
        self.obs_dim = obs_dim
        self.hidden = tuple(hidden)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def save_checkpoint(path, model: QNet, meta: dict | None = None) -> None:
    torch.save({
        "state_dict": model.state_dict(),
        "obs_dim": model.obs_dim,
        "hidden": list(model.hidden),
        "meta": meta or {},
    }, path)


def load_checkpoint(path) -> tuple[QNet, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    model = QNet(int(blob["obs_dim"]), tuple(int(h) for h in blob["hidden"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("meta", {})
