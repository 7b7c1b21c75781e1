"""Run configuration: INI file + flag overrides -> validated, typed values.

Sections mirror the subsystems (model, training, perturbation, scoring,
synthetic). Unknown sections or keys are rejected. The fully resolved config
is re-serialized canonically (sorted, repr floats) so reruns are
byte-identical.
"""

import configparser
import io

from .errors import ConfigError
from .features import PerturbationSpec
from .model import ModelConfig, ScaleSpec
from .synthetic import AnomalySpec
from .training import TrainConfig


def _int_list(text):
    try:
        return tuple(int(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _sigma(text):
    t = str(text).strip().lower()
    if t == "auto":
        return None
    return float(text)


_SCHEMA = {
    "model": {
        "blocks": int, "alpha": float, "heads": int, "variant": str,
        "hidden": _int_list, "windows": _int_list, "agg_windows": _int_list,
    },
    "training": {
        "epochs": int, "learning_rate": float, "batch_size": int,
        "beta1": float, "beta2": float, "adam_eps": float,
        "squared_distance": _bool, "checkpoint_interval": int,
    },
    "perturbation": {"enabled": _bool, "sigma": _sigma},
    "scoring": {"smooth_window": int},
    "synthetic": {
        "classes": int, "train_per_class": int, "test_per_class": int,
        "anomaly_fraction": float, "area_min": float, "area_max": float,
        "image_h": int, "image_w": int,
        "channels": _int_list, "heights": _int_list, "widths": _int_list,
    },
}

# paper-derived shipped defaults (three backbone stages)
DEFAULTS = {
    "model": {
        "blocks": 4, "alpha": 2.0, "heads": 1, "variant": "mlka+lca",
        "hidden": (128, 256, 512), "windows": (5, 7, 11),
        "agg_windows": (5, 7, 11),
    },
    "training": {
        "epochs": 200, "learning_rate": 1e-4, "batch_size": 8,
        "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
        "squared_distance": False, "checkpoint_interval": 0,
    },
    "perturbation": {"enabled": True, "sigma": None},
    "scoring": {"smooth_window": 4},
    "synthetic": {
        "classes": 3, "train_per_class": 20, "test_per_class": 12,
        "anomaly_fraction": 0.5, "area_min": 0.02, "area_max": 0.10,
        "image_h": 64, "image_w": 64,
        "channels": (16, 32), "heights": (16, 8), "widths": (16, 8),
    },
}

# desk-scale profile written next to generated datasets: same architecture
# scaled to the synthetic dims, shorter schedule, learning rate raised to
# suit the far smaller step budget
SYNTHETIC_OVERRIDES = {
    "model": {"hidden": (32, 64), "windows": (5, 3), "agg_windows": (5, 3)},
    "training": {"epochs": 50, "learning_rate": 1.5e-3},
}


def default_config():
    return {sec: dict(vals) for sec, vals in DEFAULTS.items()}


def synthetic_profile():
    cfg = default_config()
    for sec, vals in SYNTHETIC_OVERRIDES.items():
        cfg[sec].update(vals)
    return cfg


def _format_value(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def serialize_config(cfg):
    out = io.StringIO()
    for sec in sorted(cfg):
        out.write(f"[{sec}]\n")
        for key in sorted(cfg[sec]):
            out.write(f"{key} = {_format_value(cfg[sec][key])}\n")
        out.write("\n")
    return out.getvalue()


def parse_config_text(text, base=None):
    cfg = base or default_config()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from None
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]; "
                              f"expected one of {sorted(_SCHEMA)}")
        for key, raw in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; "
                                  f"expected one of {sorted(_SCHEMA[sec])}")
            try:
                cfg[sec][key] = _SCHEMA[sec][key](raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"[{sec}] {key}: {exc}") from None
    return cfg


def load_config(path, base=None):
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read(), base=base)


def apply_override(cfg, dotted_key, raw_value):
    """Apply one 'section.key=value' CLI override."""
    try:
        sec, key = dotted_key.split(".", 1)
    except ValueError:
        raise ConfigError(f"override {dotted_key!r} must be section.key") from None
    if sec not in _SCHEMA or key not in _SCHEMA[sec]:
        raise ConfigError(f"unknown config entry {dotted_key!r}")
    try:
        cfg[sec][key] = _SCHEMA[sec][key](raw_value)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{dotted_key}: {exc}") from None
    return cfg


def build_model_config(cfg, scale_dims, seed):
    """ModelConfig from the [model] section plus the dataset's scale dims."""
    m = cfg["model"]
    n = len(scale_dims)
    for key in ("hidden", "windows", "agg_windows"):
        if len(m[key]) != n:
            raise ConfigError(
                f"[model] {key} has {len(m[key])} entries but the dataset "
                f"has {n} scales")
    scales = tuple(
        ScaleSpec(channels=c, height=h, width=w, hidden=m["hidden"][j],
                  window=m["windows"][j], agg_window=m["agg_windows"][j])
        for j, (c, h, w) in enumerate(scale_dims))
    return ModelConfig(scales=scales, blocks=m["blocks"], alpha=m["alpha"],
                       heads=m["heads"], variant=m["variant"],
                       dtype="float32", seed=seed).validate()


def build_train_config(cfg, seed):
    t = cfg["training"]
    p = cfg["perturbation"]
    return TrainConfig(
        epochs=t["epochs"], learning_rate=t["learning_rate"],
        batch_size=t["batch_size"], beta1=t["beta1"], beta2=t["beta2"],
        adam_eps=t["adam_eps"], seed=seed,
        squared_distance=t["squared_distance"],
        checkpoint_interval=t["checkpoint_interval"],
        perturbation=PerturbationSpec(enabled=p["enabled"], sigma=p["sigma"]),
    ).validate()


def build_anomaly_spec(cfg):
    s = cfg["synthetic"]
    return AnomalySpec(fraction=s["anomaly_fraction"],
                       area_min=s["area_min"], area_max=s["area_max"])


def synthetic_scale_dims(cfg):
    s = cfg["synthetic"]
    if not (len(s["channels"]) == len(s["heights"]) == len(s["widths"])):
        raise ConfigError("[synthetic] channels/heights/widths lengths differ")
    return tuple(zip(s["channels"], s["heights"], s["widths"]))
