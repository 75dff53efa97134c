"""
Settings of a tscond run are grouped in the sections data, buffer, condense and eval.
For example a run file might look like this::

    [data]
    path = ETTh2.csv

    [condense]
    G = 5
    beta = 0.05

This module provides :func:`parse_config`, that layers a run file and
``section.key=value`` overrides on top of the defaults, and the
:class:`RunConfig` object used to access the resolved values.
"""
import configparser
import copy
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

from .condense import CondenseConfig
from .data import DISTILLED_LENGTHS, WindowSpec, distilled_length
from .exceptions import ConfigError, MissingArtifact
from .forecaster import Arch, Optimizer, TrainConfig
from .unroll import UnrollConfig
from .utils import PathLike, update_dict_nested

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "data": {
        "path": None,
        "split_ratio": 0.7,
        "m": 24,
        "n": 24,
        "name": None,
        "has_header": True,
        "date_column": "date",
        "strict": False,
        "kernel": 25,
    },
    "buffer": {
        "k": 10,
        "epochs": 5,
        "lr": 0.005,
        "batch_size": 32,
        "optimizer": "adam",
        "arch": "linear",
        "hidden": 64,
        "seed": 0,
        "out": None,
        "workers": 1,
    },
    "condense": {
        "E": 200,
        "G": 3,
        "beta": 0.01,
        "N": 20,
        "alpha": 0.01,
        "pair_stride": 24,
        "outer_lr": 0.01,
        "outer_momentum": 0.5,
        "L": 48,
        "condtsf": True,
        "eval_every": 0,
        "seed": 0,
        "out": None,
        "metrics": None,
        "preset": None,
    },
    "eval": {
        "arch": "linear",
        "trials": 5,
        "steps": 1000,
        "lr": 0.005,
        "seed": 0,
        "hidden": 64,
        "workers": 1,
        "full_epochs": 5,
        "full_batch_size": 32,
    },
}

# Keys whose default is None still need a type to coerce text into.
_STRING_KEYS = {
    "data.path",
    "data.name",
    "data.date_column",
    "buffer.out",
    "condense.out",
    "condense.metrics",
    "condense.preset",
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _positive(v):
    return v > 0


def _at_least_one(v):
    return v >= 1


def _non_negative(v):
    return v >= 0


# (key, check, reason)
VALIDATORS: List[Tuple[str, Any, str]] = [
    ("data.split_ratio", lambda v: 0 < v < 1, "must be in (0,1)"),
    ("data.m", _at_least_one, "must be >= 1"),
    ("data.n", _at_least_one, "must be >= 1"),
    ("data.kernel", lambda v: v >= 1 and v % 2 == 1, "must be odd and positive"),
    ("buffer.k", _at_least_one, "must be >= 1"),
    ("buffer.epochs", _at_least_one, "must be >= 1"),
    ("buffer.lr", _positive, "must be > 0"),
    ("buffer.batch_size", _non_negative, "must be >= 0 (0 trains full-batch)"),
    ("buffer.optimizer", lambda v: v in {o.value for o in Optimizer}, "must be adam or sgd"),
    ("buffer.arch", lambda v: v in {a.value for a in Arch}, "must be linear or mlp"),
    ("buffer.hidden", _at_least_one, "must be >= 1"),
    ("buffer.workers", _at_least_one, "must be >= 1"),
    ("condense.E", _at_least_one, "must be >= 1"),
    ("condense.G", _at_least_one, "must be >= 1"),
    ("condense.beta", lambda v: 0 < v < 1, "must be in (0,1)"),
    ("condense.N", _at_least_one, "must be >= 1"),
    ("condense.alpha", _positive, "must be > 0"),
    ("condense.pair_stride", _at_least_one, "must be >= 1"),
    ("condense.outer_lr", _positive, "must be > 0"),
    ("condense.outer_momentum", lambda v: 0 <= v < 1, "must be in [0,1)"),
    ("condense.L", _at_least_one, "must be >= 1"),
    ("condense.eval_every", _non_negative, "must be >= 0"),
    (
        "condense.preset",
        lambda v: v is None or v in DISTILLED_LENGTHS,
        "must be one of " + ", ".join(sorted(DISTILLED_LENGTHS)),
    ),
    ("eval.arch", lambda v: v in {a.value for a in Arch}, "must be linear or mlp"),
    ("eval.trials", _at_least_one, "must be >= 1"),
    ("eval.steps", _at_least_one, "must be >= 1"),
    ("eval.lr", _positive, "must be > 0"),
    ("eval.hidden", _at_least_one, "must be >= 1"),
    ("eval.workers", _at_least_one, "must be >= 1"),
    ("eval.full_epochs", _at_least_one, "must be >= 1"),
    ("eval.full_batch_size", _non_negative, "must be >= 0 (0 trains full-batch)"),
]


class Section:
    """Read-only attribute view of one resolved config section."""

    def __init__(self, name: str, values: Dict[str, Any]):
        self._name = name
        self._values = values

    def __getattr__(self, attr):
        try:
            return self._values[attr]
        except KeyError:
            raise AttributeError("Invalid tscond setting: '%s.%s'" % (self._name, attr))

    def __getitem__(self, key):
        return self._values[key]

    def as_dict(self) -> Dict[str, Any]:
        return dict(self._values)


class RunConfig:
    """A settings object, that allows run settings to be accessed as properties.

    For example:
        cfg = parse_config("run.ini", ["condense.beta=0.05"])
        print(cfg.condense.beta)

    Values missing from the user settings fall back to :data:`DEFAULTS`.

    """

    def __init__(self, user_settings=None, defaults=None):
        super().__init__()
        self._user_settings = user_settings or {}
        self.defaults = defaults or DEFAULTS
        self._cached_attrs = set()

    @property
    def user_settings(self):
        return self._user_settings

    def reload(self):
        for attr in self._cached_attrs:
            delattr(self, attr)
        self._cached_attrs.clear()

    def __getattr__(self, attr):
        if attr.startswith("_") or attr not in self.defaults:
            raise AttributeError("Invalid tscond setting section: '%s'" % attr)

        values = dict(self.defaults[attr])
        values.update(self.user_settings.get(attr, {}))
        val = Section(attr, values)

        # Cache the result
        self._cached_attrs.add(attr)
        setattr(self, attr, val)
        return val

    def get(self, key: str):
        section, name = key.split(".", 1)
        return getattr(self, section)[name]

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        """Every resolved value, nested by section."""
        return {section: getattr(self, section).as_dict() for section in self.defaults}

    def replace(self, overrides: Iterable[str]) -> "RunConfig":
        """A validated copy with dotted ``section.key=value`` overrides applied."""
        violations: List[Tuple[str, str]] = []
        user = copy.deepcopy(self.user_settings)
        update_dict_nested(user, _parse_overrides(overrides, violations))
        return _resolve(user, violations)

    def window_spec(self, stride: int = 1) -> WindowSpec:
        return WindowSpec(self.data.m, self.data.n, stride)

    def synthetic_length(self, dataset: Optional[str] = None) -> int:
        """``condense.L``, unless a preset picks the length for `dataset`."""
        if self.condense.preset is None:
            return self.condense.L
        return distilled_length(dataset or self.data.name or "", self.condense.preset)

    def condense_config(self, synthetic_length: Optional[int] = None) -> CondenseConfig:
        c = self.condense
        return CondenseConfig(
            epochs=c.E,
            gap=c.G,
            beta=c.beta,
            unroll=UnrollConfig(c.N, c.alpha, c.pair_stride),
            outer_lr=c.outer_lr,
            outer_momentum=c.outer_momentum,
            synthetic_length=synthetic_length or self.synthetic_length(),
            condtsf=c.condtsf,
            eval_every=c.eval_every,
            seed=c.seed,
        )

    def expert_train_config(self) -> TrainConfig:
        return TrainConfig(
            Optimizer(self.buffer.optimizer),
            self.buffer.lr,
            self.buffer.epochs,
            self.buffer.batch_size or None,
            self.buffer.seed,
        )

    def eval_train_config(self) -> TrainConfig:
        return TrainConfig(Optimizer.ADAM, self.eval.lr, self.eval.steps, None, self.eval.seed)

    def full_train_config(self) -> TrainConfig:
        return TrainConfig(
            Optimizer.ADAM,
            self.eval.lr,
            self.eval.full_epochs,
            self.eval.full_batch_size or None,
            self.eval.seed,
        )


def _coerce(key: str, default: Any, raw: Any) -> Any:
    """Convert `raw` to the type of `default`; raises TypeError."""
    if not isinstance(raw, str):
        if default is None or isinstance(raw, type(default)) or (
            isinstance(default, float) and isinstance(raw, int) and not isinstance(raw, bool)
        ):
            return float(raw) if isinstance(default, float) else raw
        if raw is None and key in _STRING_KEYS:
            return None
        raise TypeError(f"expected {type(default).__name__}, got {raw!r}")

    text = raw.strip()
    if key in _STRING_KEYS:
        return text or None
    if isinstance(default, bool):
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise TypeError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise TypeError(f"expected an integer, got {raw!r}")
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise TypeError(f"expected a number, got {raw!r}")
    return text.lower()


def _parse_overrides(overrides: Iterable[str], violations: List[Tuple[str, str]]) -> dict:
    user: Dict[str, Dict[str, Any]] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            violations.append((item, "expected section.key=value"))
            continue
        user.setdefault(section, {})[name] = value
    return user


def _read_file(path: PathLike, violations: List[Tuple[str, str]]) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(str(path))

    # A run manifest (or any nested JSON mapping) is accepted as a run file.
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            violations.append((str(path), f"not valid JSON: {e}"))
            return {}
        data = data.get("config", data)
        return {s: {k: v for k, v in d.items()} for s, d in data.items() if isinstance(d, dict)}

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # type:ignore
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        violations.append((str(path), str(e).replace("\n", " ")))
        return {}
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _resolve(user: dict, violations: List[Tuple[str, str]]) -> RunConfig:
    resolved: Dict[str, Dict[str, Any]] = {}
    for section, values in user.items():
        if section not in DEFAULTS:
            violations.append((section, "unknown section"))
            continue
        for name, raw in values.items():
            key = f"{section}.{name}"
            if name not in DEFAULTS[section]:
                violations.append((key, "unknown key"))
                continue
            try:
                resolved.setdefault(section, {})[name] = _coerce(key, DEFAULTS[section][name], raw)
            except TypeError as e:
                violations.append((key, str(e)))

    cfg = RunConfig(resolved)
    invalid = {key for key, _ in violations}
    for key, check, reason in VALIDATORS:
        if key not in invalid and not check(cfg.get(key)):
            violations.append((key, reason))

    if cfg.condense.preset is None and not {"condense.L", "data.m", "data.n"} & invalid:
        if cfg.condense.L < cfg.data.m + cfg.data.n:
            violations.append(("condense.L", "must be >= data.m + data.n"))

    if violations:
        raise ConfigError(violations)
    return cfg


def parse_config(path: Optional[PathLike] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Resolve a run configuration.

    :param path: optional run file (INI sections or a JSON run manifest)
    :param overrides: ``section.key=value`` strings, applied last

    Every unknown key, badly typed value and failed bound is collected into
    one :class:`ConfigError`.

    """
    violations: List[Tuple[str, str]] = []
    user: dict = {}
    if path is not None:
        user = _read_file(path, violations)
    update_dict_nested(user, _parse_overrides(overrides, violations))
    return _resolve(user, violations)
