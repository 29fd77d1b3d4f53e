"""Torch autograd adapter around the numpy loss kernel.

The forward pass hands CPU tensors to the engine; the backward pass
returns the engine's analytic gradients scaled by the upstream gradient.
Scales stay constants: no gradient flows into them.
"""

from __future__ import annotations

import numpy as np
import torch

from . import duo_loss_and_grads, scale_of


def tensor_scale(features: torch.Tensor, epsilon: float = 1e-12, center: bool = True) -> float:
    """Semantic scale of a (D, H, W) tensor; detaches and moves to CPU."""
    return scale_of(
        features.detach().cpu().contiguous().numpy(), epsilon=epsilon, center=center
    )


class _DuoLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, probs, noise_head, epsilon_raw, labels, scales, alpha, beta):
        loss, g_probs, g_head, g_raw = duo_loss_and_grads(
            probs.detach().cpu().contiguous().double().numpy(),
            labels.detach().cpu().contiguous().double().numpy(),
            noise_head.detach().cpu().contiguous().double().numpy(),
            epsilon_raw.detach().cpu().contiguous().double().numpy(),
            scales,
            alpha=alpha,
            beta=beta,
        )
        ctx.save_for_backward(
            torch.from_numpy(np.ascontiguousarray(g_probs)),
            torch.from_numpy(np.ascontiguousarray(g_head)),
            torch.from_numpy(np.ascontiguousarray(g_raw)),
        )
        ctx.dtypes = (probs.dtype, noise_head.dtype, epsilon_raw.dtype)
        return probs.new_tensor(loss, dtype=torch.float64)

    @staticmethod
    def backward(ctx, grad_output):
        g_probs, g_head, g_raw = ctx.saved_tensors
        scale = grad_output.to(torch.float64)
        dt_probs, dt_head, dt_raw = ctx.dtypes
        return (
            (scale * g_probs).to(dt_probs),
            (scale * g_head).to(dt_head),
            (scale * g_raw).to(dt_raw),
            None,
            None,
            None,
            None,
        )


def duo_loss(
    probs: torch.Tensor,
    labels: torch.Tensor,
    noise_head: torch.Tensor,
    epsilon_raw: torch.Tensor,
    scales: dict,
    alpha: float = 1.0,
    beta: float = 0.5,
) -> torch.Tensor:
    """Differentiable scalar loss for (probs, noise_head, epsilon_raw)."""
    return _DuoLoss.apply(probs, noise_head, epsilon_raw, labels, scales, alpha, beta)
