import copy
import os
import os.path
import logging

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config.yml")
THREADS_ENV = "RESHUFFLE_BENCH_THREADS"


class ConfigError(Exception):
    """An invalid scheme, flag, config file or input record."""


DEFAULTS = {
    "simulate": {
        "m": [0.5, 1.0, 2.0, 4.0],
        "kappa": [0.1, 1.0, 10.0, 100.0],
        "tau": [0.2, 0.4, 0.6, 0.8, 1.0],
        "sigma_k2": 1.0,
        "J": 51,
        "minimizer": 0.5,
        "replications": 10000,
    },
    "hpo": {
        "task": {"family": "threshold", "flip": 0.4},
        "n": 200,
        "alpha": 0.2,
        "M": 5,
        "grid": {"low": 0.0, "high": 1.0, "size": 200},
        "iterations": 200,
        "replications": 500,
    },
    "covcheck": {
        "task": {"family": "shrinkage", "theta": 0.0, "noise": 1.0},
        "n": 200,
        "alpha": 0.2,
        "M": 5,
        "grid": [0.0, 0.25, 0.5],
        "replications": 20000,
    },
    "tau": {
        "draws": 100000,
    },
    "eta": {
        "J": [100, 1000, 10000],
        "repetitions": 20,
        "probes_per_point": 20,
        "d": 1,
    },
}

# [section, type, error message]
SECTIONS = [["simulate", dict, "Section `simulate` must be a dictionary with indented keys followed by colons."],
            ["hpo", dict, "Section `hpo` must be a dictionary with indented keys followed by colons."],
            ["covcheck", dict, "Section `covcheck` must be a dictionary with indented keys followed by colons."],
            ["tau", dict, "Section `tau` must be a dictionary with indented keys followed by colons."],
            ["eta", dict, "Section `eta` must be a dictionary with indented keys followed by colons."]]

SIMULATE_KEYS = [["m", list, "`simulate.m` must be a list of curvatures."],
                 ["kappa", list, "`simulate.kappa` must be a list of correlation constants."],
                 ["tau", list, "`simulate.tau` must be a list of reshuffling factors."],
                 ["sigma_k2", (int, float), "`simulate.sigma_k2` must be a number."],
                 ["J", int, "`simulate.J` must be an integer."],
                 ["replications", int, "`simulate.replications` must be an integer."]]

TASK_FAMILIES = ("shrinkage", "threshold")


def _check_table(config, table, where):
    for key, kind, message in table:
        if key not in config:
            raise ConfigError("Your config does not have required {} key `{}`.".format(where, key))
        if isinstance(config[key], bool) or not isinstance(config[key], kind):
            raise ConfigError(message)


def _check_task(section, name):
    task = section.get("task")
    if not isinstance(task, dict) or task.get("family") not in TASK_FAMILIES:
        raise ConfigError("`{}.task.family` must be one of {}.".format(name, ", ".join(TASK_FAMILIES)))


def validate_config(config):
    if not isinstance(config, dict):
        raise ConfigError("The config must be a mapping of sections.")
    for name, kind, message in SECTIONS:
        if name not in config:
            raise ConfigError("Your config does not have required section `{}`.".format(name))
        if not isinstance(config[name], kind):
            raise ConfigError(message)

    simulate = config["simulate"]
    _check_table(simulate, SIMULATE_KEYS, "`simulate`")
    for key in ("m", "kappa", "tau"):
        if not simulate[key]:
            raise ConfigError("`simulate.{}` must not be empty.".format(key))
    if simulate["replications"] < 1:
        raise ConfigError("`simulate.replications` must be at least 1.")
    if simulate["J"] < 2:
        raise ConfigError("`simulate.J` must be at least 2.")
    if any(not 0.0 <= t <= 1.0 for t in simulate["tau"]):
        raise ConfigError("`simulate.tau` values must lie in [0, 1].")

    _check_task(config["hpo"], "hpo")
    _check_task(config["covcheck"], "covcheck")
    if config["covcheck"].get("replications", 0) < 2:
        raise ConfigError("`covcheck.replications` must be at least 2.")
    return config


def _merge(defaults, loaded):
    merged = copy.deepcopy(defaults)
    for key, value in (loaded or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(config_file=None):
    """Load a YAML or JSON config, fill it from DEFAULTS and validate it."""
    config_file = config_file or DEFAULT_CONFIG_FILE
    if not os.path.isfile(config_file):
        raise ConfigError("The config file `{}` does not exist.".format(config_file))
    with open(config_file) as stream:
        try:
            loaded = yaml.safe_load(stream)
        except yaml.YAMLError as e:
            logger.error("There appears to be a syntax problem with {}".format(config_file))
            raise ConfigError("Unparseable config {}: {}".format(config_file, e)) from e
    if loaded is not None and not isinstance(loaded, dict):
        raise ConfigError("The config {} must be a mapping of sections.".format(config_file))
    config = _merge(DEFAULTS, loaded)
    return validate_config(config)


def merge_overrides(section, overrides):
    """Flags that were given on the command line win over the config section."""
    resolved = copy.deepcopy(section)
    for key, value in overrides.items():
        if value is not None:
            resolved[key] = value
    return resolved


def default_threads():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError("{} must be an integer, got `{}`.".format(THREADS_ENV, raw))
    return max(1, threads)
