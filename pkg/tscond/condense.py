"""The distillation loop: trajectory matching interleaved with CondTSF.

Matching epochs move s along the hypergradient of the trajectory loss.
CondTSF epochs pull the label part of every disjoint ``m + n`` block of s
toward an expert's forecast of the block's input part, which shrinks the
label error by ``(1 - beta) ** 2`` per pass.
"""
from dataclasses import dataclass, field
import enum
import logging
import math
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import torch

from .buffer import ExpertBuffer, ExpertPair, check_fingerprint
from .data import (
    Origin,
    SyntheticSeries,
    TimeSeries,
    WindowSpec,
    condensing_ratio,
    sample_init_synthetic,
)
from .exceptions import (
    LayoutMismatch,
    NoBlocks,
    NonFiniteDuringUnroll,
    NonFiniteSynthetic,
    NoSyntheticPairs,
)
from .forecaster import DTYPE, ParamVector, unflatten
from .unroll import UnrollConfig, hypergradient
from .utils import PathLike, derive_seed, progress, write_csv

logger = logging.getLogger(__name__)

#: Trains fresh models on a synthetic series and returns test (MAE, MSE).
Evaluator = Callable[[SyntheticSeries], Tuple[float, float]]

ExpertLike = Union[ExpertPair, ParamVector]

METRICS_HEADER = ("epoch", "kind", "param_error", "label_error", "test_mae", "test_mse")


@dataclass(frozen=True)
class CondenseConfig:
    #: Total condensation epochs (E).
    epochs: int = 200
    #: CondTSF runs on every epoch divisible by this gap (G).
    gap: int = 3
    #: Additive update ratio of CondTSF.
    beta: float = 0.01
    unroll: UnrollConfig = field(default_factory=UnrollConfig)
    outer_lr: float = 0.01
    outer_momentum: float = 0.5
    synthetic_length: int = 48
    condtsf: bool = True
    #: Evaluate s every this many epochs, 0 disables it.
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.gap < 1:
            raise ValueError(f"gap must be >= 1, got {self.gap}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must be in (0, 1), got {self.beta}")
        if not self.outer_lr > 0:
            raise ValueError(f"outer_lr must be > 0, got {self.outer_lr}")
        if not 0 <= self.outer_momentum < 1:
            raise ValueError(f"outer_momentum must be in [0, 1), got {self.outer_momentum}")
        if self.synthetic_length < 1:
            raise ValueError(f"synthetic_length must be >= 1, got {self.synthetic_length}")
        if self.eval_every < 0:
            raise ValueError(f"eval_every must be >= 0, got {self.eval_every}")


class EpochKind(enum.Enum):
    MATCH = "match"
    CONDTSF = "condtsf"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    kind: EpochKind
    param_error: Optional[float]
    label_error: float
    test_mae: Optional[float] = None
    test_mse: Optional[float] = None


@dataclass
class MetricsLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError(f"epoch {record.epoch} does not follow {self.records[-1].epoch}")
        if not record.label_error >= 0:
            raise ValueError(f"label error must be >= 0, got {record.label_error}")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def kinds(self) -> List[EpochKind]:
        return [r.kind for r in self.records]

    def column(self, name: str) -> List[Optional[float]]:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path: PathLike):
        write_csv(
            path,
            METRICS_HEADER,
            (
                [r.epoch, r.kind.value, r.param_error, r.label_error, r.test_mae, r.test_mse]
                for r in self.records
            ),
        )


def _theta_f(expert: ExpertLike) -> ParamVector:
    return expert.theta_f if isinstance(expert, ExpertPair) else expert


def _check_spec(theta: ParamVector, spec: Optional[WindowSpec]) -> WindowSpec:
    layout_spec = theta.layout.spec
    if spec is not None and (spec.lookback, spec.horizon) != (
        layout_spec.lookback,
        layout_spec.horizon,
    ):
        raise LayoutMismatch(f"expert forecasts {layout_spec}, not {spec}")
    return layout_spec


def block_starts(length: int, spec: WindowSpec) -> List[int]:
    """Starts of the disjoint ``m + n`` blocks; a short tail is left out."""
    starts = list(range(0, length - spec.span + 1, spec.span))
    if not starts:
        raise NoBlocks(f"series of length {length} holds no block of {spec.span} rows")
    return starts


def _block_forecasts(values: np.ndarray, theta_f: ParamVector, starts: List[int]) -> np.ndarray:
    m = theta_f.layout.spec.lookback
    inputs = torch.as_tensor(np.stack([values[t : t + m] for t in starts]), dtype=DTYPE)
    with torch.no_grad():
        return unflatten(theta_f)(inputs).numpy()


def condtsf_update(
    s: SyntheticSeries,
    expert: ExpertLike,
    spec: Optional[WindowSpec] = None,
    beta: float = 0.01,
) -> SyntheticSeries:
    """Blend every block's label rows with the expert forecast of its input rows.

    ``label <- (1 - beta) * label + beta * forecast``; input rows and the
    rows after the last whole block are left untouched.

    """
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    theta_f = _theta_f(expert)
    spec = _check_spec(theta_f, spec)
    values = np.array(s.values, dtype=np.float64)
    starts = block_starts(values.shape[0], spec)
    if beta == 0:
        return s.replace(values)

    forecasts = _block_forecasts(values, theta_f, starts)
    m = spec.lookback
    for t, forecast in zip(starts, forecasts):
        label = values[t + m : t + spec.span]
        values[t + m : t + spec.span] = (1 - beta) * label + beta * forecast
    return s.replace(values)


def label_error(s, expert: ExpertLike, spec: Optional[WindowSpec] = None) -> float:
    """Summed squared distance between block labels and the expert's forecasts."""
    theta_f = _theta_f(expert)
    spec = _check_spec(theta_f, spec)
    values = np.asarray(getattr(s, "values", s), dtype=np.float64)
    starts = block_starts(values.shape[0], spec)
    forecasts = _block_forecasts(values, theta_f, starts)
    m = spec.lookback
    labels = np.stack([values[t + m : t + spec.span] for t in starts])
    return float(np.sum((forecasts - labels) ** 2))


def random_baseline(train: TimeSeries, length: int, seed: int) -> SyntheticSeries:
    """The untrained reference: a random contiguous train segment."""
    return sample_init_synthetic(train, length, seed)


def distill(
    buf: ExpertBuffer,
    train: TimeSeries,
    cfg: CondenseConfig,
    evaluator: Optional[Evaluator] = None,
    strict: bool = True,
) -> Tuple[SyntheticSeries, MetricsLog]:
    """Condense `train` into a synthetic series of ``cfg.synthetic_length`` rows.

    Epochs are numbered from 1. With CondTSF enabled every epoch divisible
    by ``cfg.gap`` applies one CondTSF pass with a uniformly drawn expert;
    every other epoch is a trajectory-matching step with a uniformly drawn
    expert pair. The label error against expert 0 is logged every epoch and
    `evaluator` runs every ``cfg.eval_every`` epochs.

    """
    check_fingerprint(buf, train, strict=strict)
    spec = buf.spec
    if cfg.synthetic_length < spec.span:
        raise NoSyntheticPairs(
            f"synthetic length {cfg.synthetic_length} is shorter than {spec.span}"
        )
    logger.info(
        "distilling %d train rows into %d (ratio %.3g), %d epochs, CondTSF %s",
        train.length,
        cfg.synthetic_length,
        condensing_ratio(cfg.synthetic_length, train.length),
        cfg.epochs,
        "on" if cfg.condtsf else "off",
    )

    init = sample_init_synthetic(train, cfg.synthetic_length, cfg.seed)
    synthetic = torch.tensor(init.values, dtype=DTYPE, requires_grad=True)
    optimizer = torch.optim.SGD([synthetic], lr=cfg.outer_lr, momentum=cfg.outer_momentum)
    rng = np.random.default_rng(derive_seed(cfg.seed, 0))
    log = MetricsLog()

    epochs = progress(range(1, cfg.epochs + 1), desc="distill")
    for epoch in epochs:
        expert = buf.pairs[int(rng.integers(buf.k))]
        param_error = None
        if cfg.condtsf and epoch % cfg.gap == 0:
            kind = EpochKind.CONDTSF
            current = SyntheticSeries(synthetic.detach().numpy(), Origin.DISTILLED, cfg.seed)
            updated = condtsf_update(current, expert, spec, cfg.beta)
            with torch.no_grad():
                synthetic.copy_(torch.from_numpy(np.array(updated.values)))
        else:
            kind = EpochKind.MATCH
            try:
                param_error, grad = hypergradient(
                    expert.theta0, expert.theta_f, synthetic.detach(), cfg.unroll
                )
            except NonFiniteDuringUnroll:
                raise NonFiniteSynthetic(epoch)
            if not math.isfinite(param_error) or not np.isfinite(grad).all():
                raise NonFiniteSynthetic(epoch)
            optimizer.zero_grad()
            synthetic.grad = torch.from_numpy(grad)
            optimizer.step()

        values = synthetic.detach().numpy().copy()
        if not np.isfinite(values).all():
            raise NonFiniteSynthetic(epoch)

        record = EpochRecord(epoch, kind, param_error, label_error(values, buf.pairs[0], spec))
        if evaluator is not None and cfg.eval_every and epoch % cfg.eval_every == 0:
            mae, mse = evaluator(SyntheticSeries(values, Origin.DISTILLED, cfg.seed))
            record = EpochRecord(epoch, kind, param_error, record.label_error, mae, mse)
            logger.info(
                "epoch %d: label error %.5g, test MAE %.5g MSE %.5g",
                epoch,
                record.label_error,
                mae,
                mse,
            )
        logger.debug(
            "epoch %d %s: param error %s, label error %.6g",
            epoch,
            kind.value,
            "-" if param_error is None else f"{param_error:.6g}",
            record.label_error,
        )
        log.append(record)

    result = SyntheticSeries(synthetic.detach().numpy().copy(), Origin.DISTILLED, cfg.seed)
    return result, log
