"""Differentiation through an unrolled student trained on the synthetic series.

The student starts from an expert's initial parameters and takes N
full-batch gradient-descent steps on the training pairs of s. Every step
is recorded with ``create_graph=True`` so the normalized distance between
the last student and the expert's final parameters can be differentiated
with respect to s.
"""
from dataclasses import dataclass, field
import logging
from typing import List, Tuple, Union

import numpy as np
import torch

from .data import SyntheticSeries, WindowSpec, window_starts
from .exceptions import (
    DegenerateExpert,
    LayoutMismatch,
    NonFiniteDuringUnroll,
    NoSyntheticPairs,
    SeriesTooShort,
    TapeInvalid,
)
from .forecaster import (
    DTYPE,
    Forecaster,
    ParamVector,
    build_model,
    gradient_step,
    loss_and_grad,
)

logger = logging.getLogger(__name__)

VectorLike = Union[ParamVector, torch.Tensor]


@dataclass(frozen=True)
class UnrollConfig:
    #: Number of student steps (N).
    steps: int = 20

    #: Student learning rate (alpha).
    lr: float = 0.01

    #: Stride between the training pairs taken from s.
    pair_stride: int = 24

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.pair_stride < 1:
            raise ValueError(f"pair_stride must be >= 1, got {self.pair_stride}")


@dataclass
class UnrollTape:
    """Recorded student trajectory, usable for one reverse pass."""

    #: Student vectors from the expert's initial one to the last step.
    thetas: List[torch.Tensor]
    #: The leaf tensor standing for s in the recorded graph.
    synthetic: torch.Tensor
    model: Forecaster
    valid: bool = field(default=True)

    @property
    def steps(self) -> int:
        return len(self.thetas) - 1


def _values(v: VectorLike) -> torch.Tensor:
    return v.values if isinstance(v, ParamVector) else torch.as_tensor(v, dtype=DTYPE)


def _synthetic_tensor(s) -> torch.Tensor:
    values = s.values if isinstance(s, SyntheticSeries) else s
    if isinstance(values, torch.Tensor):
        return values.detach().to(DTYPE).clone()
    return torch.tensor(np.asarray(values), dtype=DTYPE)


def synthetic_pairs(
    s: torch.Tensor, spec: WindowSpec, stride: int
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Training pairs of s at `stride`, kept differentiable with respect to s."""
    try:
        starts = window_starts(s.shape[0], spec.with_stride(stride))
    except SeriesTooShort:
        raise NoSyntheticPairs(
            f"synthetic series of length {s.shape[0]} is shorter than {spec.span}"
        )
    m = spec.lookback
    inputs = torch.stack([s[t : t + m] for t in starts])
    targets = torch.stack([s[t + m : t + spec.span] for t in starts])
    return inputs, targets


def _unroll(
    theta0: ParamVector, s: torch.Tensor, cfg: UnrollConfig, create_graph: bool
) -> Tuple[List[torch.Tensor], Forecaster]:
    layout = theta0.layout
    model = build_model(layout)
    inputs, targets = synthetic_pairs(s, layout.spec, cfg.pair_stride)

    theta = theta0.values.detach().clone()
    if create_graph:
        theta.requires_grad_(True)
    thetas = [theta]
    for step in range(cfg.steps):
        _, grad = loss_and_grad(model, theta, inputs, targets, create_graph=create_graph)
        theta = gradient_step(theta if create_graph else theta.detach(), grad, cfg.lr)
        if not torch.isfinite(theta).all():
            raise NonFiniteDuringUnroll(step + 1)
        thetas.append(theta)
    return thetas, model


def student_unroll(
    theta0: ParamVector, s, cfg: UnrollConfig
) -> Tuple[ParamVector, UnrollTape]:
    """Run N full-batch gradient steps from `theta0` on the pairs of `s`."""
    synthetic = _synthetic_tensor(s).requires_grad_(True)
    thetas, model = _unroll(theta0, synthetic, cfg, create_graph=True)
    theta_n = ParamVector(thetas[-1].detach().clone(), theta0.layout)
    return theta_n, UnrollTape(thetas, synthetic, model)


def _trajectory_loss(theta_n: VectorLike, theta_f: VectorLike, theta0: VectorLike):
    theta_n, theta_f, theta0 = _values(theta_n), _values(theta_f), _values(theta0)
    if not theta_n.shape == theta_f.shape == theta0.shape:
        raise LayoutMismatch("trajectory vectors have different sizes")
    denominator = torch.sum((theta_f - theta0) ** 2)
    if denominator == 0:
        raise DegenerateExpert()
    return torch.sum((theta_f - theta_n) ** 2) / denominator


def trajectory_loss(theta_n: VectorLike, theta_f: VectorLike, theta0: VectorLike) -> float:
    """``||theta_f - theta_n||^2 / ||theta_f - theta0||^2``."""
    return float(_trajectory_loss(theta_n, theta_f, theta0))


def grad_synthetic(tape: UnrollTape, theta_f: VectorLike, theta0: VectorLike) -> np.ndarray:
    """Gradient of the trajectory loss with respect to s, as an ``L x C`` array.

    The tape's graph is released afterwards, so each tape serves one call.

    """
    if not tape.valid or not tape.thetas:
        raise TapeInvalid()
    tape.valid = False

    loss = _trajectory_loss(tape.thetas[-1], theta_f, theta0)
    (grad,) = torch.autograd.grad(loss, tape.synthetic)
    return grad.detach().numpy().copy()


def hypergradient(
    theta0: ParamVector, theta_f: ParamVector, s, cfg: UnrollConfig
) -> Tuple[float, np.ndarray]:
    """Trajectory loss and its gradient with respect to s in one call."""
    theta_n, tape = student_unroll(theta0, s, cfg)
    loss = trajectory_loss(theta_n, theta_f, theta0)
    return loss, grad_synthetic(tape, theta_f, theta0)


def fd_check(
    s, theta0: ParamVector, theta_f: ParamVector, cfg: UnrollConfig, h: float = 1e-5
) -> float:
    """Largest relative error between grad_synthetic and central differences.

    The relative error of each element uses the denominator
    ``max(|analytic|, |numeric|, 1e-12)``.

    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be > 0, got {h}")

    base = _synthetic_tensor(s)
    _, analytic = hypergradient(theta0, theta_f, base, cfg)

    def loss_at(values: torch.Tensor) -> float:
        thetas, _ = _unroll(theta0, values, cfg, create_graph=False)
        return trajectory_loss(thetas[-1], theta_f, theta0)

    numeric = np.zeros(analytic.shape)
    for idx in np.ndindex(*analytic.shape):
        plus = base.clone()
        plus[idx] += h
        minus = base.clone()
        minus[idx] -= h
        numeric[idx] = (loss_at(plus) - loss_at(minus)) / (2 * h)

    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    error = float(np.max(np.abs(analytic - numeric) / denominator))
    logger.debug("finite-difference check over %d elements: %.3g", analytic.size, error)
    return error
