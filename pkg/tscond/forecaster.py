"""Forecasting models, flat parameter vectors and training loops.

Both architectures map a ``(..., m, C)`` window to a ``(..., n, C)``
forecast with weights shared across channels. Everything runs in float64.

Training operates on the flat :class:`ParamVector` of a model through
:meth:`Forecaster.forward_with`, which is the same path the unrolled
student in :mod:`tscond.unroll` differentiates through.
"""
from dataclasses import dataclass, field
import enum
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .data import Window, WindowSpec
from .exceptions import DivergedLoss, KEven, LayoutMismatch, NoPairs, ShapeMismatch

logger = logging.getLogger(__name__)

DTYPE = torch.float64

PairsLike = Union[
    Sequence[Window],
    Tuple[np.ndarray, np.ndarray],
    Tuple[torch.Tensor, torch.Tensor],
]


class Arch(enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


class Optimizer(enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


class Segment(NamedTuple):
    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


#: Segment order of the flat vector and the module attribute holding each one.
_SEGMENTS: Dict[Arch, Tuple[Tuple[str, str], ...]] = {
    Arch.LINEAR: (
        ("W_seasonal", "linear_seasonal.weight"),
        ("b_seasonal", "linear_seasonal.bias"),
        ("W_trend", "linear_trend.weight"),
        ("b_trend", "linear_trend.bias"),
    ),
    Arch.MLP: (
        ("W1", "hidden.weight"),
        ("b1", "hidden.bias"),
        ("W2", "output.weight"),
        ("b2", "output.bias"),
    ),
}


@dataclass(frozen=True)
class ParamLayout:
    """Architecture descriptor and segment table of a flat parameter vector."""

    arch: Arch
    spec: WindowSpec
    kernel: int = 25
    hidden: int = 64
    segments: Tuple[Segment, ...] = field(default=(), compare=False)

    def __post_init__(self):
        # Only m and n shape the parameters; the unused size field is zeroed.
        object.__setattr__(self, "spec", WindowSpec(self.spec.lookback, self.spec.horizon))
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.arch is Arch.LINEAR:
            object.__setattr__(self, "hidden", 0)
        else:
            object.__setattr__(self, "kernel", 0)
        if self.segments:
            return
        m, n = self.spec.lookback, self.spec.horizon
        if self.arch is Arch.LINEAR:
            shapes = [(n, m), (n,), (n, m), (n,)]
        else:
            shapes = [(self.hidden, m), (self.hidden,), (n, self.hidden), (n,)]

        segments = []
        offset = 0
        for (name, _attr), shape in zip(_SEGMENTS[self.arch], shapes):
            segments.append(Segment(name, offset, shape))
            offset += int(np.prod(shape))
        object.__setattr__(self, "segments", tuple(segments))

    @property
    def size(self) -> int:
        return sum(s.size for s in self.segments)

    def attribute(self, segment: Segment) -> str:
        return dict(_SEGMENTS[self.arch])[segment.name]


@dataclass(frozen=True, eq=False)
class ParamVector:
    """All parameters of a forecaster as one flat float64 vector."""

    values: torch.Tensor
    layout: ParamLayout

    def __post_init__(self):
        if self.values.dim() != 1 or self.values.numel() != self.layout.size:
            raise LayoutMismatch(
                f"vector of shape {tuple(self.values.shape)} does not fit a "
                f"{self.layout.arch.value} layout of size {self.layout.size}"
            )

    def segment(self, name: str) -> torch.Tensor:
        for s in self.layout.segments:
            if s.name == name:
                return self.values[s.offset : s.offset + s.size].view(s.shape)
        raise KeyError(name)

    def squared_distance(self, other: "ParamVector") -> float:
        if other.layout != self.layout:
            raise LayoutMismatch()
        return float(torch.sum((self.values - other.values) ** 2))

    def to_bytes(self) -> bytes:
        return self.values.detach().cpu().numpy().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, layout: ParamLayout) -> "ParamVector":
        values = np.frombuffer(data, dtype="<f8").astype(np.float64)
        return cls(torch.from_numpy(values.copy()), layout)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings for training a forecaster on window pairs."""

    optimizer: Optimizer = Optimizer.ADAM
    learning_rate: float = 0.005
    epochs: int = 5
    #: Mini-batch size, or ``None`` for full-batch training.
    batch_size: Optional[int] = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or None, got {self.batch_size}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.optimizer, self.learning_rate, self.epochs, self.batch_size, seed)


def decompose(x, kernel: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Split ``(..., m, C)`` windows into seasonal and trend parts.

    The trend is a centered moving average of width `kernel` over the input
    padded by repeating its first and last rows ``(kernel - 1) / 2`` times.

    """
    if kernel < 1 or kernel % 2 == 0:
        raise KEven(f"moving-average kernel must be odd and positive, got {kernel}")
    x = torch.as_tensor(x, dtype=DTYPE)
    rows = x.reshape(-1, *x.shape[-2:])
    pad = (kernel - 1) // 2
    front = rows[:, :1, :].repeat_interleave(pad, dim=1)
    end = rows[:, -1:, :].repeat_interleave(pad, dim=1)
    padded = torch.cat([front, rows, end], dim=1)
    trend = F.avg_pool1d(padded.transpose(1, 2), kernel_size=kernel, stride=1).transpose(1, 2)
    trend = trend.reshape(x.shape)
    return x - trend, trend


def mse_loss(pred, target) -> torch.Tensor:
    """Mean of squared differences over every element."""
    pred = torch.as_tensor(pred, dtype=DTYPE)
    target = torch.as_tensor(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    return torch.mean((pred - target) ** 2)


def _over_time(layer, x: torch.Tensor) -> torch.Tensor:
    # Rows are (window, channel) pairs so every layer is a plain 2-D affine map.
    z = x.transpose(-1, -2)
    out = layer(z.reshape(-1, z.shape[-1]))
    return out.reshape(*z.shape[:-1], -1).transpose(-1, -2)


class Forecaster(nn.Module):
    """Base class of the channel-shared forecasters."""

    arch: Arch

    def __init__(self, layout: ParamLayout):
        super().__init__()
        self.layout = layout

    @property
    def spec(self) -> WindowSpec:
        return self.layout.spec

    def _check_input(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        if x.dim() < 2 or x.shape[-2] != self.spec.lookback:
            raise ShapeMismatch(
                f"expected (..., {self.spec.lookback}, C) input, got {tuple(x.shape)}"
            )
        return x

    def forward_with(self, theta: torch.Tensor, x) -> torch.Tensor:
        """Forward pass with parameters taken from a flat vector.

        Parameters are views into `theta`, so gradients flow back to it.

        """
        params = {
            self.layout.attribute(s): theta[s.offset : s.offset + s.size].view(s.shape)
            for s in self.layout.segments
        }
        return torch.func.functional_call(self, params, (x,))


class LinearForecaster(Forecaster):
    """DLinear: linear heads on the seasonal and trend parts of the input."""

    arch = Arch.LINEAR

    def __init__(self, layout: ParamLayout):
        super().__init__(layout)
        m, n = layout.spec.lookback, layout.spec.horizon
        self.kernel = layout.kernel
        self.linear_seasonal = nn.Linear(m, n, dtype=DTYPE)
        self.linear_trend = nn.Linear(m, n, dtype=DTYPE)

    def forward(self, x):
        x = self._check_input(x)
        seasonal, trend = decompose(x, self.kernel)
        return _over_time(self.linear_seasonal, seasonal) + _over_time(self.linear_trend, trend)


class MLPForecaster(Forecaster):
    """One hidden ReLU layer applied to each channel."""

    arch = Arch.MLP

    def __init__(self, layout: ParamLayout):
        super().__init__(layout)
        m, n = layout.spec.lookback, layout.spec.horizon
        if layout.hidden < 1:
            raise ValueError(f"hidden width must be >= 1, got {layout.hidden}")
        self.hidden = nn.Linear(m, layout.hidden, dtype=DTYPE)
        self.output = nn.Linear(layout.hidden, n, dtype=DTYPE)

    def forward(self, x):
        x = self._check_input(x)
        return _over_time(lambda z: self.output(torch.relu(self.hidden(z))), x)


_ARCHS = {Arch.LINEAR: LinearForecaster, Arch.MLP: MLPForecaster}


def build_model(layout: ParamLayout) -> Forecaster:
    """An uninitialized model for `layout`."""
    if layout.arch is Arch.LINEAR and (layout.kernel < 1 or layout.kernel % 2 == 0):
        raise KEven(f"moving-average kernel must be odd and positive, got {layout.kernel}")
    return _ARCHS[layout.arch](layout)


def init_params(
    arch: Arch,
    spec: WindowSpec,
    rng_seed: int,
    kernel: int = 25,
    hidden: int = 64,
) -> Forecaster:
    """Draw every weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    layout = ParamLayout(Arch(arch), spec, kernel, hidden)
    model = build_model(layout)
    generator = torch.Generator().manual_seed(int(rng_seed))
    with torch.no_grad():
        for s in layout.segments:
            param = model.get_parameter(layout.attribute(s))
            fan_in = layout.spec.lookback
            if s.name in ("W2", "b2"):
                fan_in = layout.hidden
            bound = 1.0 / math.sqrt(fan_in)
            param.uniform_(-bound, bound, generator=generator)
    return model


def forward(model: Forecaster, x) -> torch.Tensor:
    """Predictions of `model` for `x`, detached from the autograd graph."""
    with torch.no_grad():
        return model(x)


def flatten(model: Forecaster) -> ParamVector:
    layout = model.layout
    values = torch.cat(
        [model.get_parameter(layout.attribute(s)).detach().reshape(-1) for s in layout.segments]
    )
    return ParamVector(values.clone(), layout)


def unflatten(pv: ParamVector, arch: Optional[Arch] = None) -> Forecaster:
    if arch is not None and Arch(arch) is not pv.layout.arch:
        raise LayoutMismatch(f"vector holds a {pv.layout.arch.value} model, not {Arch(arch).value}")
    model = build_model(pv.layout)
    with torch.no_grad():
        for s in pv.layout.segments:
            model.get_parameter(pv.layout.attribute(s)).copy_(pv.segment(s.name))
    return model


def stack_pairs(pairs: PairsLike) -> Tuple[torch.Tensor, torch.Tensor]:
    """Window pairs as ``(W, m, C)`` inputs and ``(W, n, C)`` targets."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], Window):
        inputs, targets = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            raise NoPairs()
        inputs = np.stack([p.input for p in pairs])
        targets = np.stack([p.target for p in pairs])
    inputs = torch.as_tensor(inputs, dtype=DTYPE)
    targets = torch.as_tensor(targets, dtype=DTYPE)
    if inputs.shape[0] == 0:
        raise NoPairs()
    return inputs, targets


def loss_and_grad(
    model: Forecaster,
    theta: torch.Tensor,
    inputs: torch.Tensor,
    targets: torch.Tensor,
    create_graph: bool = False,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Training loss at `theta` and its gradient with respect to `theta`."""
    if not create_graph:
        theta = theta.detach().requires_grad_(True)
    loss = mse_loss(model.forward_with(theta, inputs), targets)
    (grad,) = torch.autograd.grad(loss, theta, create_graph=create_graph)
    return loss, grad


def gradient_step(theta: torch.Tensor, grad: torch.Tensor, lr: float) -> torch.Tensor:
    return theta - lr * grad


@dataclass
class FitResult:
    model: Forecaster
    #: Loss of the initial parameters over all pairs.
    initial_loss: float
    #: Mean batch loss of every epoch.
    epoch_losses: List[float]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss


def fit(model: Forecaster, pairs: PairsLike, cfg: TrainConfig) -> FitResult:
    """Train a copy of `model` on window pairs.

    Full-batch SGD takes exactly ``theta - lr * grad`` steps over the pairs
    in their given order. Mini-batches are shuffled with a generator seeded
    by ``cfg.seed``.

    """
    inputs, targets = stack_pairs(pairs)
    total = inputs.shape[0]
    batch = total if cfg.batch_size is None else min(cfg.batch_size, total)
    generator = torch.Generator().manual_seed(int(cfg.seed))

    theta = flatten(model).values
    with torch.no_grad():
        initial_loss = float(mse_loss(model.forward_with(theta, inputs), targets))

    optimizer = None
    if cfg.optimizer is Optimizer.ADAM:
        theta = theta.clone().requires_grad_(True)
        optimizer = torch.optim.Adam([theta], lr=cfg.learning_rate)

    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(total, generator=generator) if batch < total else None
        running = 0.0
        for start in range(0, total, batch):
            if order is None:
                xb, yb = inputs, targets
            else:
                idx = order[start : start + batch]
                xb, yb = inputs[idx], targets[idx]

            if optimizer is None:
                loss, grad = loss_and_grad(model, theta, xb, yb)
                theta = gradient_step(theta.detach(), grad, cfg.learning_rate)
            else:
                optimizer.zero_grad()
                loss = mse_loss(model.forward_with(theta, xb), yb)
                loss.backward()
                optimizer.step()

            value = float(loss)
            if not math.isfinite(value):
                raise DivergedLoss(epoch, value)
            running += value * xb.shape[0]
        epoch_losses.append(running / total)
        logger.debug("epoch %d loss %.6g", epoch, epoch_losses[-1])

    trained = unflatten(ParamVector(theta.detach().clone(), model.layout))
    return FitResult(trained, initial_loss, epoch_losses)


def train(model: Forecaster, pairs: PairsLike, cfg: TrainConfig) -> Forecaster:
    return fit(model, pairs, cfg).model
