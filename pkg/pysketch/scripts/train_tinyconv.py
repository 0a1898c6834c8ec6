"""Train the bundled tinyconv backbone on a synthetic local-structure task.

The network regresses four stride-4 maps of a grayscale image: local mean,
horizontal and vertical gradient energy, and Laplacian edge energy.  Training
is seeded and CPU-only; the frozen state dict ships as package data so the
backbone loads without network access.

Usage: python3 train_tinyconv.py [--steps N] [--seed S] [--out PATH]
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

import sys

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pysketch.backbones import TinyConv  # noqa: E402

SIZE = 48
BATCH = 8

_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
).reshape(1, 1, 3, 3)
_SOBEL_Y = _SOBEL_X.transpose(2, 3).contiguous()
_LAPLACE = torch.tensor(
    [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]
).reshape(1, 1, 3, 3)


def synth_image(rng: np.random.Generator) -> np.ndarray:
    """Random 0..255 grayscale scene: gradient, rectangles, disks, texture."""
    yy, xx = np.mgrid[0:SIZE, 0:SIZE] / (SIZE - 1.0)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    img = 90.0 + 70.0 * (np.cos(angle) * xx + np.sin(angle) * yy)
    for _ in range(rng.integers(2, 5)):
        y0, x0 = rng.integers(0, SIZE - 8, size=2)
        h, w = rng.integers(6, 20, size=2)
        img[y0 : y0 + h, x0 : x0 + w] = rng.uniform(20.0, 235.0)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(6, SIZE - 6, size=2)
        r = rng.uniform(3.0, 9.0)
        mask = (yy * (SIZE - 1) - cy) ** 2 + (xx * (SIZE - 1) - cx) ** 2 <= r * r
        img[mask] = rng.uniform(20.0, 235.0)
    freq = rng.uniform(0.2, 0.9)
    img += 12.0 * np.sin(freq * (yy * (SIZE - 1)) + 2.0 * freq * (xx * (SIZE - 1)))
    img += rng.normal(0.0, 2.0, size=img.shape)
    return np.clip(img, 0.0, 255.0)


def targets(gray: torch.Tensor) -> torch.Tensor:
    """Four stride-4 maps: mean, |sobel_x|, |sobel_y|, |laplacian|."""
    mean = F.avg_pool2d(gray, 4)
    gx = F.avg_pool2d(F.conv2d(gray, _SOBEL_X, padding=1).abs(), 4)
    gy = F.avg_pool2d(F.conv2d(gray, _SOBEL_Y, padding=1).abs(), 4)
    lap = F.avg_pool2d(F.conv2d(gray, _LAPLACE, padding=1).abs(), 4)
    return torch.cat([mean, gx, gy, lap], dim=1)


def train(steps: int, seed: int) -> TinyConv:
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    model = TinyConv()
    opt = torch.optim.Adam(model.parameters(), lr=1e-2)
    for step in range(steps):
        batch = np.stack([synth_image(rng) for _ in range(BATCH)])
        gray = torch.tensor(batch / 255.0, dtype=torch.float32).unsqueeze(1)
        pred = model(gray.expand(-1, 3, -1, -1))
        loss = F.mse_loss(pred, targets(gray))
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == steps - 1:
            print(f"step {step:4d}  loss {loss.item():.6f}")
    return model


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seed", type=int, default=20240)
    parser.add_argument(
        "--out",
        default=str(
            Path(__file__).resolve().parents[1] / "src" / "pysketch" / "data" / "tinyconv_v1.pt"
        ),
    )
    args = parser.parse_args()
    model = train(args.steps, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out)
    print(f"saved {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
