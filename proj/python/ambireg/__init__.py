"""Python access to the ambireg phantoms, renderer, mode detection and pipeline commands.

Configurations and reports are plain dicts; volumes are float32 arrays of
shape (nz, ny, nx) and images (height, width).
"""

import json

import numpy as np

from . import _core
from ._core import ConfigError, FormatError, IoError, NumericError, ParameterError, TrainingError

__all__ = [
    "ConfigError",
    "FormatError",
    "IoError",
    "NumericError",
    "ParameterError",
    "TrainingError",
    "default_config",
    "resolve_config",
    "make_phantom",
    "rot180_volume",
    "render_drr",
    "detect_modes",
    "gen_data",
    "train",
    "evaluate",
    "infer",
]


def _dump(cfg):
    return "" if cfg is None else json.dumps(cfg)


def default_config():
    return json.loads(_core.default_config())


def resolve_config(config=None, overrides=()):
    """Fills defaults, applies `dotted.key=value` overrides and validates."""
    return json.loads(_core.resolve_config(_dump(config), list(overrides)))


def make_phantom(spec=None, seed=0, marker=None, **fields):
    """Returns (volume, spacing).

    `spec` and keyword fields follow the config's data.phantom; `marker` is
    None for a symmetric phantom, True for the default marker or a marker dict.
    """
    merged = dict(default_config()["data"]["phantom"])
    merged.update(spec or {})
    merged.update(fields)
    if marker is True:
        marker = default_config()["data"]["marker"]
    return _core.make_phantom(json.dumps(merged), seed, _dump(marker or None))


def rot180_volume(volume, spacing):
    return _core.rot180_volume(volume, tuple(spacing))


def render_drr(volume, spacing, pose, camera=None):
    """pose: dict with tx, ty, tz (mm) and lao, cran (degrees)."""
    full = {"tx": 0.0, "ty": 0.0, "tz": 0.0, "lao": 0.0, "cran": 0.0}
    full.update(pose)
    return _core.render_drr(volume, tuple(spacing), json.dumps(full), _dump(camera))


def detect_modes(samples, threshold=2000.0, seed=0):
    return json.loads(_core.detect_modes(np.asarray(samples, dtype=np.float64), threshold, seed))


def gen_data(config, data_dir):
    return json.loads(_core.gen_data(_dump(config), str(data_dir)))


def train(config, manifest, run_dir, resume=True, stop_after=None):
    return json.loads(_core.train(_dump(config), str(manifest), str(run_dir), resume, stop_after))


def evaluate(config, model, manifest, out_dir):
    return json.loads(_core.evaluate(_dump(config), str(model), str(manifest), str(out_dir)))


def infer(config, model, volume, image, seed=0):
    return json.loads(_core.infer(_dump(config), str(model), str(volume), str(image), seed))
