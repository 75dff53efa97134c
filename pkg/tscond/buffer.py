"""Expert parameter buffer: generation, binary persistence and diagnostics.

File layout (little endian)::

    magic "TSCB" | version u32 | arch u8 | m u32 | n u32 | K u32 | C u32 | k u32
    | fingerprint 32 bytes | master seed u64
    | k x (expert index u32 | final train loss f64 | theta0 f64[] | thetaF f64[])

For MLP buffers the K field holds the hidden width.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging
from pathlib import Path
import struct
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import torch

from .data import TimeSeries, WindowSpec, window_arrays, windows
from .exceptions import (
    BadMagic,
    DegenerateExpert,
    FingerprintMismatch,
    LayoutMismatch,
    SingleExpert,
    TrainingFailed,
    TruncatedFile,
    TSCondError,
    VersionMismatch,
)
from .forecaster import (
    Arch,
    ParamLayout,
    ParamVector,
    TrainConfig,
    fit,
    flatten,
    init_params,
    unflatten,
)
from .utils import PathLike, derive_seed, fingerprint, progress

logger = logging.getLogger(__name__)

MAGIC = b"TSCB"
FORMAT_VERSION = 1

_ARCH_TAGS = {Arch.LINEAR: 0, Arch.MLP: 1}
_HEADER = struct.Struct("<4sIBIIIII32sQ")
_RECORD = struct.Struct("<Id")


@dataclass(frozen=True, eq=False)
class ExpertPair:
    """Initial and final parameters of one expert trained on the full train set."""

    theta0: ParamVector
    theta_f: ParamVector
    expert_index: int
    train_loss_final: float

    def __post_init__(self):
        if self.theta0.layout != self.theta_f.layout:
            raise LayoutMismatch(f"expert {self.expert_index} endpoints have different layouts")
        if torch.equal(self.theta0.values, self.theta_f.values):
            raise DegenerateExpert(index=self.expert_index)


@dataclass(frozen=True, eq=False)
class ExpertBuffer:
    pairs: Tuple[ExpertPair, ...]
    layout: ParamLayout
    #: Number of channels of the dataset the experts were trained on.
    channels: int
    #: SHA-256 of the normalized train matrix.
    fingerprint: bytes
    master_seed: int
    #: Settings the experts were trained with; not stored in the file.
    train_config: Optional[TrainConfig] = None

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if not self.pairs:
            raise ValueError("an expert buffer needs at least one expert")
        for pair in self.pairs:
            if pair.theta0.layout != self.layout:
                raise LayoutMismatch(f"expert {pair.expert_index} does not match the buffer")

    @property
    def k(self) -> int:
        return len(self.pairs)

    @property
    def spec(self) -> WindowSpec:
        return self.layout.spec

    def matches(self, train: TimeSeries) -> bool:
        return self.fingerprint == fingerprint(train.values)


class ConsistencyReport(NamedTuple):
    mean_pairwise_distance: float
    max_pairwise_distance: float
    mean_prediction_norm: float

    @property
    def ratio(self) -> float:
        """Mean pairwise distance relative to the prediction scale."""
        if self.mean_prediction_norm == 0:
            return 0.0 if self.mean_pairwise_distance == 0 else float("inf")
        return self.mean_pairwise_distance / self.mean_prediction_norm


def check_fingerprint(buf: ExpertBuffer, train: TimeSeries, strict: bool = False):
    """Warn, or raise when `strict`, if `buf` was built from other data."""
    if buf.matches(train):
        return
    msg = f"buffer fingerprint {buf.fingerprint.hex()[:12]} does not match the train split"
    if strict:
        raise FingerprintMismatch(msg)
    logger.warning(msg)


def generate_buffer(
    train: TimeSeries,
    spec: WindowSpec,
    k: int = 10,
    cfg: Optional[TrainConfig] = None,
    master_seed: int = 0,
    arch: Arch = Arch.LINEAR,
    kernel: int = 25,
    hidden: int = 64,
    workers: int = 1,
) -> ExpertBuffer:
    """Train `k` experts from independent initializations on the train series.

    Expert i draws its initialization and batch order from
    ``derive_seed(master_seed, i)``, so serial and parallel runs produce the
    same buffer.

    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cfg = cfg or TrainConfig()
    pairs = window_arrays(train, spec)

    def train_expert(index: int) -> ExpertPair:
        seed = derive_seed(master_seed, index)
        model = init_params(arch, spec, seed, kernel, hidden)
        try:
            result = fit(model, pairs, cfg.with_seed(seed))
        except TSCondError as e:
            raise TrainingFailed("expert", index, e)
        try:
            pair = ExpertPair(flatten(model), flatten(result.model), index, result.final_loss)
        except DegenerateExpert:
            raise DegenerateExpert(index=index)
        logger.info(
            "expert %d/%d: train loss %.5g -> %.5g",
            index + 1,
            k,
            result.initial_loss,
            result.final_loss,
        )
        return pair

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            experts = list(progress(executor.map(train_expert, range(k)), total=k, desc="experts"))
    else:
        experts = [train_expert(i) for i in progress(range(k), desc="experts")]

    return ExpertBuffer(
        pairs=tuple(experts),
        layout=experts[0].theta0.layout,
        channels=train.channels,
        fingerprint=fingerprint(train.values),
        master_seed=master_seed,
        train_config=cfg,
    )


def save_buffer(buf: ExpertBuffer, path: PathLike):
    layout = buf.layout
    size_field = layout.kernel if layout.arch is Arch.LINEAR else layout.hidden
    chunks = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            _ARCH_TAGS[layout.arch],
            layout.spec.lookback,
            layout.spec.horizon,
            size_field,
            buf.channels,
            buf.k,
            buf.fingerprint,
            buf.master_seed,
        )
    ]
    for pair in buf.pairs:
        chunks.append(_RECORD.pack(pair.expert_index, pair.train_loss_final))
        chunks.append(pair.theta0.to_bytes())
        chunks.append(pair.theta_f.to_bytes())

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))
    logger.info("wrote %d experts to %s", buf.k, path)


def load_buffer(
    path: PathLike, train: Optional[TimeSeries] = None, strict: bool = False
) -> ExpertBuffer:
    """Read a buffer file, checking it against `train` when given."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFile(f"{path} ends inside the header")

    _, version, tag, m, n, size_field, channels, k, digest, seed = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise VersionMismatch(version, FORMAT_VERSION)
    archs = {v: a for a, v in _ARCH_TAGS.items()}
    if tag not in archs:
        raise BadMagic(f"{path} has unknown architecture tag {tag}")

    arch = archs[tag]
    spec = WindowSpec(m, n)
    if arch is Arch.LINEAR:
        layout = ParamLayout(arch, spec, kernel=size_field)
    else:
        layout = ParamLayout(arch, spec, hidden=size_field)

    width = layout.size * 8
    offset = _HEADER.size
    pairs: List[ExpertPair] = []
    for _ in range(k):
        end = offset + _RECORD.size + 2 * width
        if len(data) < end:
            raise TruncatedFile(f"{path} ends inside expert record {len(pairs)}")
        index, loss = _RECORD.unpack_from(data, offset)
        offset += _RECORD.size
        theta0 = ParamVector.from_bytes(data[offset : offset + width], layout)
        theta_f = ParamVector.from_bytes(data[offset + width : end], layout)
        pairs.append(ExpertPair(theta0, theta_f, index, loss))
        offset = end
    if offset != len(data):
        logger.warning("%s has %d unexpected trailing bytes", path, len(data) - offset)

    buf = ExpertBuffer(tuple(pairs), layout, channels, digest, seed)
    if train is not None:
        check_fingerprint(buf, train, strict)
    return buf


def expert_predictions(buf: ExpertBuffer, inputs) -> torch.Tensor:
    """Predictions of every expert's final model, shaped ``(k, ...)``."""
    with torch.no_grad():
        return torch.stack([unflatten(p.theta_f)(inputs) for p in buf.pairs])


def expert_consistency(
    buf: ExpertBuffer, s, spec: Optional[WindowSpec] = None
) -> ConsistencyReport:
    """How similarly the trained experts forecast the windows of `s`.

    For every stride-1 window the mean Euclidean distance over all expert
    pairs is computed; the report holds the mean and max of that quantity
    over windows and the mean norm of a single expert forecast.

    """
    if buf.k < 2:
        raise SingleExpert()
    spec = spec or buf.spec
    if (spec.lookback, spec.horizon) != (buf.spec.lookback, buf.spec.horizon):
        raise LayoutMismatch(f"buffer experts use {buf.spec}, not {spec}")

    inputs = np.stack([w.input for w in windows(s, spec.with_stride(1))])
    preds = expert_predictions(buf, inputs)
    flat = preds.reshape(buf.k, preds.shape[1], -1).transpose(0, 1)
    distances = torch.linalg.vector_norm(flat[:, :, None, :] - flat[:, None, :, :], dim=-1)
    upper = torch.triu_indices(buf.k, buf.k, offset=1)
    per_window = distances[:, upper[0], upper[1]].mean(dim=1)

    return ConsistencyReport(
        mean_pairwise_distance=float(per_window.mean()),
        max_pairwise_distance=float(per_window.max()),
        mean_prediction_norm=float(torch.linalg.vector_norm(flat, dim=-1).mean()),
    )

