"""Run configuration: attrs classes loaded from JSON, every published constant as a named default."""
import hashlib
import json
import logging
import warnings
from pathlib import Path

import attr
import pandas as pd

from .constants import RANDOM_VARIANT, SECONDS_PER_DAY, METRICS, ModelKind
from .diagnostics import ConfigError, ConfigWarning

logger = logging.getLogger(__name__)

DEFAULT_BOUNDARY = "2020-02-20"


def _positive(instance, attribute, value):
    if not value > 0:
        raise ConfigError(f"{type(instance).__name__}.{attribute.name} must be > 0, got {value!r}")


def _non_negative(instance, attribute, value):
    if not value >= 0:
        raise ConfigError(f"{type(instance).__name__}.{attribute.name} must be >= 0, got {value!r}")


def _open_unit(instance, attribute, value):
    if not 0 < value < 1:
        raise ConfigError(f"{type(instance).__name__}.{attribute.name} must lie in (0, 1), got {value!r}")


def _one_of(*choices):
    def check(instance, attribute, value):
        if value not in choices:
            raise ConfigError(f"{type(instance).__name__}.{attribute.name} must be one of {choices}, "
                              f"got {value!r}")
    return check


def parse_boundary(value):
    """Epoch seconds from an int or a date/datetime string (UTC)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    try:
        stamp = pd.Timestamp(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot parse boundary {value!r}") from None
    if stamp.tzinfo is None:
        stamp = stamp.tz_localize("UTC")
    return int(stamp.timestamp())


def _from_dict(cls, data, **converted):
    """Instantiate an attrs config class, rejecting unknown keys."""
    known = attr.fields_dict(cls)
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    kwargs = dict(data)
    kwargs.update(converted)
    return cls(**kwargs)


@attr.s(frozen=True)
class SplitConfig:
    """Temporal split: windows are half-open and given in seconds."""

    boundary = attr.ib(default=DEFAULT_BOUNDARY, converter=parse_boundary)
    train_window = attr.ib(default=365 * SECONDS_PER_DAY, validator=_positive)
    holdout_window = attr.ib(default=30 * SECONDS_PER_DAY, validator=_positive)
    user_half_split_seed = attr.ib(default=0)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "train_window_days" in data:
            data["train_window"] = int(data.pop("train_window_days") * SECONDS_PER_DAY)
        if "holdout_window_days" in data:
            data["holdout_window"] = int(data.pop("holdout_window_days") * SECONDS_PER_DAY)
        if "seed" in data:
            data["user_half_split_seed"] = data.pop("seed")
        return _from_dict(cls, data)

    def to_dict(self):
        return attr.asdict(self)


@attr.s(frozen=True)
class TrainConfig:
    """Shallow Net training. ``margin``, ``batch_size`` and the plateau constants are assumptions."""

    lr = attr.ib(default=0.001, validator=_positive)
    epochs = attr.ib(default=100, validator=_non_negative)
    n_neg = attr.ib(default=20, validator=_positive)
    margin = attr.ib(default=0.2, validator=_positive)
    batch_size = attr.ib(default=256, validator=_positive)
    early_stop_patience = attr.ib(default=10, validator=_positive)
    plateau_patience = attr.ib(default=5, validator=_positive)
    plateau_factor = attr.ib(default=0.5, validator=_open_unit)
    min_lr = attr.ib(default=1e-5, validator=_non_negative)
    monitor_k = attr.ib(default=50, validator=_positive)
    beta1 = attr.ib(default=0.9, validator=_open_unit)
    beta2 = attr.ib(default=0.999, validator=_open_unit)
    adam_eps = attr.ib(default=1e-8, validator=_positive)
    random_dim = attr.ib(default=128, validator=_positive)
    dtype = attr.ib(default="float32", validator=_one_of("float32", "float64"))
    seed = attr.ib(default=0)
    progress = attr.ib(default=False)

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data)

    def to_dict(self):
        return attr.asdict(self)


@attr.s(frozen=True)
class SeqTrainConfig:
    """Masked sequential recommender training; architecture constants are desk-scale assumptions."""

    epochs = attr.ib(default=200, validator=_non_negative)
    lr = attr.ib(default=0.001, validator=_positive)
    mask_prob = attr.ib(default=0.2, validator=_open_unit)
    d_model = attr.ib(default=64, validator=_positive)
    n_layers = attr.ib(default=2, validator=_positive)
    n_heads = attr.ib(default=2, validator=_positive)
    ff_mult = attr.ib(default=4, validator=_positive)
    batch_size = attr.ib(default=32, validator=_positive)
    max_len = attr.ib(default=300, validator=_positive)
    tie_output = attr.ib(default=False)
    early_stop_patience = attr.ib(default=10, validator=_positive)
    plateau_patience = attr.ib(default=5, validator=_positive)
    plateau_factor = attr.ib(default=0.5, validator=_open_unit)
    min_lr = attr.ib(default=1e-5, validator=_non_negative)
    monitor_k = attr.ib(default=50, validator=_positive)
    beta1 = attr.ib(default=0.9, validator=_open_unit)
    beta2 = attr.ib(default=0.999, validator=_open_unit)
    adam_eps = attr.ib(default=1e-8, validator=_positive)
    dtype = attr.ib(default="float32", validator=_one_of("float32", "float64"))
    seed = attr.ib(default=0)
    progress = attr.ib(default=False)

    def __attrs_post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data)

    def to_dict(self):
        return attr.asdict(self)


def _models(value):
    return tuple(value)


def _check_models(instance, attribute, value):
    bad = [m for m in value if m not in ModelKind.all]
    if bad or not value:
        raise ConfigError(f"models must be a non-empty subset of {ModelKind.all}, got {list(value)}")
    if len(set(value)) != len(value):
        raise ConfigError(f"models listed twice: {list(value)}")


@attr.s(frozen=True)
class RunConfig:
    """Everything one comparison sweep needs: inputs, split, models, training and evaluation."""

    interactions = attr.ib(converter=str)
    embeddings = attr.ib(converter=dict)
    interactions_format = attr.ib(default=None, validator=_one_of(None, "csv", "tsv", "onion"))
    backends = attr.ib(factory=dict, converter=dict)
    split = attr.ib(factory=SplitConfig)
    models = attr.ib(default=ModelKind.all, converter=_models, validator=_check_models)
    include_random = attr.ib(default=True)
    shallow = attr.ib(factory=TrainConfig)
    seqrec = attr.ib(factory=SeqTrainConfig)
    k = attr.ib(default=50, validator=_positive)
    output_dir = attr.ib(default="runs/latest", converter=str)
    bootstrap_resamples = attr.ib(default=10000, validator=_positive)
    bootstrap_seed = attr.ib(default=0)
    significance_metric = attr.ib(default="hitrate", validator=_one_of(*METRICS))
    plots = attr.ib(default=True)
    results_db = attr.ib(default=None)

    @classmethod
    def from_dict(cls, data, base_dir=None):
        """Build from parsed JSON; relative paths resolve against ``base_dir``."""
        data = dict(data)
        for key in ("interactions", "embeddings"):
            if key not in data:
                raise ConfigError(f"run config misses required key {key!r}")

        def resolve(p):
            p = Path(p)
            return str(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)

        converted = {
            "interactions": resolve(data["interactions"]),
            "embeddings": {name: resolve(p) for name, p in data["embeddings"].items()},
            "split": SplitConfig.from_dict(data.get("split", {})),
            "shallow": TrainConfig.from_dict(data.get("shallow", {})),
            "seqrec": SeqTrainConfig.from_dict(data.get("seqrec", {})),
        }
        if "output_dir" in data:
            converted["output_dir"] = resolve(data["output_dir"])
        if data.get("results_db"):
            converted["results_db"] = data["results_db"]
        return _from_dict(cls, data, **converted)

    def validate(self):
        """Check the things that depend on the filesystem; raises ``ConfigError``."""
        missing = [p for p in [self.interactions] + list(self.embeddings.values()) if not Path(p).exists()]
        if missing:
            raise ConfigError(f"config references missing files: {missing}")
        if RANDOM_VARIANT in self.embeddings:
            raise ConfigError(f"variant name {RANDOM_VARIANT!r} is reserved for the random baseline")
        unknown = sorted(set(self.backends) - set(self.embeddings))
        if unknown:
            raise ConfigError(f"backends given for unknown variants {unknown}")
        if ModelKind.KNN in self.models and not self.embeddings:
            warnings.warn("knn selected without embedding variants", ConfigWarning)
        return self

    def with_seed(self, seed):
        """Copy with every seed replaced by ``seed``."""
        return attr.evolve(
            self,
            split=attr.evolve(self.split, user_half_split_seed=seed),
            shallow=attr.evolve(self.shallow, seed=seed),
            seqrec=attr.evolve(self.seqrec, seed=seed),
            bootstrap_seed=seed,
        )

    def to_dict(self):
        return attr.asdict(self, retain_collection_types=False)

    def config_hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def _reject_duplicates(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} in config")
        seen[key] = value
    return seen


def load_config(path):
    """Parse a JSON run config; relative paths are taken relative to the config file."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh, object_pairs_hook=_reject_duplicates)
    config = RunConfig.from_dict(data, base_dir=path.parent)
    logger.info("loaded config %s (hash %s)", path, config.config_hash()[:12])
    return config
