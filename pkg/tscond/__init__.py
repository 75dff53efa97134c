__version__ = "0.1"

from .buffer import ExpertBuffer, generate_buffer, load_buffer, save_buffer  # noqa: E402
from .condense import CondenseConfig, condtsf_update, distill, label_error  # noqa: E402
from .data import WindowSpec, load_csv, split_normalize  # noqa: E402
from .evaluate import evaluate_full, evaluate_synthetic  # noqa: E402
from .forecaster import Arch, TrainConfig, init_params, train  # noqa: E402
from .settings import RunConfig, parse_config  # noqa: E402
from .unroll import UnrollConfig, student_unroll, trajectory_loss  # noqa: E402

__all__ = [
    "Arch",
    "CondenseConfig",
    "ExpertBuffer",
    "RunConfig",
    "TrainConfig",
    "UnrollConfig",
    "WindowSpec",
    "condtsf_update",
    "distill",
    "evaluate_full",
    "evaluate_synthetic",
    "generate_buffer",
    "init_params",
    "label_error",
    "load_buffer",
    "load_csv",
    "parse_config",
    "save_buffer",
    "split_normalize",
    "student_unroll",
    "train",
    "trajectory_loss",
]
