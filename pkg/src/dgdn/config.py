"""Text configuration: key=value lines with [layer] sections.

Layers are listed bottom to top. Unknown keys, missing required keys and
shape-chain violations are rejected at parse time. Example:

    input_h = 28
    input_w = 28
    input_bands = 1
    classes = 10
    mode = mcem
    [layer]
    k = 39
    dict_h = 8
    dict_w = 8
    pool_h = 3
    pool_w = 3
    [layer]
    k = 117
    dict_h = 6
    dict_w = 6
"""

import importlib.resources
import os

from .errors import ConfigError
from .mcem import TrainConfig
from .model import Hyperparams, LayerSpec, NetworkSpec

_REQUIRED = ("input_h", "input_w", "input_bands", "classes")

_INT_KEYS = {
    "input_h", "input_w", "input_bands", "classes", "seed", "minibatch",
    "ns", "iters", "estep_sweeps", "burnin", "collection", "thin",
    "checkpoint_every", "test_iters", "threads", "pretrain_burnin",
    "pretrain_collection", "pretrain_images", "pretrain", "train_limit",
    "test_limit",
}
_FLOAT_KEYS = {
    "learning_rate", "rmsprop_decay", "svm_gamma", "a_s", "b_s", "a_e", "b_e",
    "a_w", "b_w", "a_0", "b_0", "test_theta", "prune_threshold", "init_scale",
}
_STR_KEYS = {"mode", "train_images", "train_labels", "test_images", "test_labels"}
_LAYER_INT_KEYS = {"k", "dict_h", "dict_w", "pool_h", "pool_w"}

_HYPER_KEYS = {"a_s", "b_s", "a_e", "b_e", "a_w", "b_w", "a_0", "b_0",
               "svm_gamma", "rmsprop_decay", "learning_rate", "ns", "minibatch"}
_TRAIN_KEYS = {"minibatch", "ns", "iters", "seed", "mode", "estep_sweeps",
               "burnin", "collection", "thin", "checkpoint_every", "test_iters",
               "test_theta", "threads", "pretrain_burnin", "pretrain_collection",
               "pretrain_images", "prune_threshold"}


def bundled_config_path(name):
    """Path of a config shipped with the package (e.g. 'mnist.cfg')."""
    ref = importlib.resources.files("dgdn") / "configs" / name
    return str(ref)


def resolve_config(path):
    """Accept a filesystem path or the bare name of a bundled config."""
    if os.path.exists(path):
        return path
    bundled = bundled_config_path(os.path.basename(path))
    if os.path.exists(bundled):
        return bundled
    raise ConfigError(f"config file not found: {path}")


def _parse_value(key, raw, lineno):
    if key in _INT_KEYS or key in _LAYER_INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects an integer, got {raw!r}")
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: {key} expects a number, got {raw!r}")
    return raw


def parse_config(path):
    """Parse a config file into (NetworkSpec, TrainConfig, extras).

    extras carries the data paths and pretraining/limit knobs the CLI uses.
    """
    path = resolve_config(path)
    glob = {}
    layers = []
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line == "[layer]":
                section = {}
                layers.append(section)
                continue
            if line.startswith("["):
                raise ConfigError(f"line {lineno}: unknown section {line}")
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if section is not None:
                if key not in _LAYER_INT_KEYS:
                    raise ConfigError(f"line {lineno}: unknown layer key {key!r}")
                section[key] = _parse_value(key, raw, lineno)
            else:
                if key not in _INT_KEYS | _FLOAT_KEYS | _STR_KEYS:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                glob[key] = _parse_value(key, raw, lineno)

    for key in _REQUIRED:
        if key not in glob:
            raise ConfigError(f"missing required key {key!r}")
    if not layers:
        raise ConfigError("config defines no [layer] sections")
    layer_specs = []
    for i, sec in enumerate(layers):
        for key in ("k", "dict_h", "dict_w"):
            if key not in sec:
                raise ConfigError(f"[layer] {i + 1}: missing {key!r}")
        layer_specs.append(LayerSpec(sec["k"], sec["dict_h"], sec["dict_w"],
                                     sec.get("pool_h", 1), sec.get("pool_w", 1)))

    hypers = Hyperparams(**{k: glob[k] for k in _HYPER_KEYS if k in glob})
    hypers.validate()
    spec = NetworkSpec(glob["input_h"], glob["input_w"], glob["input_bands"],
                       glob["classes"], layer_specs, hypers)
    config = TrainConfig(**{k: glob[k] for k in _TRAIN_KEYS if k in glob})
    config.minibatch = glob.get("minibatch", hypers.minibatch)
    config.ns = glob.get("ns", hypers.ns)
    config.validate()
    extras = {k: glob[k] for k in
              ("train_images", "train_labels", "test_images", "test_labels",
               "pretrain", "train_limit", "test_limit", "init_scale")
              if k in glob}
    return spec, config, extras
