"""Plain-text configuration for the command-line pipeline.

INI-style ``key = value`` sections map onto the module parameter types:
``[stack]``, ``[augment]``, ``[postproc]`` and ``[metrics]``.  Unknown
sections or keys are rejected, and every value passes the owning type's
validation.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .augment import AugmentConfig
from .hover import PostprocParams
from .preprocess import ClaheParams, StackConfig


@dataclass(frozen=True)
class CliConfig:
    stack: StackConfig = StackConfig()
    augment: AugmentConfig = AugmentConfig()
    postproc: PostprocParams = PostprocParams()
    iou_threshold: float = 0.5


def _pair(raw: str, cast) -> tuple:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {raw!r}")
    return cast(parts[0]), cast(parts[1])


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_stack(items: dict[str, str]) -> StackConfig:
    kwargs = {}
    clahe_on = StackConfig().clahe is not None
    tile_grid = ClaheParams().tile_grid
    clip_limit = ClaheParams().clip_limit
    for key, raw in items.items():
        if key == "channel_order":
            kwargs["channel_order"] = tuple(p.strip() for p in raw.split(",") if p.strip())
        elif key == "clahe":
            clahe_on = _bool(raw)
        elif key == "tile_grid":
            tile_grid = _pair(raw, int)
        elif key == "clip_limit":
            clip_limit = float(raw)
        elif key == "derive_from_enhanced":
            kwargs["derive_from_enhanced"] = _bool(raw)
        else:
            raise ValueError(f"unknown key in [stack]: {key}")
    kwargs["clahe"] = ClaheParams(tile_grid, clip_limit) if clahe_on else None
    return StackConfig(**kwargs)


def _parse_augment(items: dict[str, str]) -> AugmentConfig:
    kwargs = {}
    for key, raw in items.items():
        if key in ("shear_deg", "scale", "gauss_blur_sigma", "noise_sigma"):
            kwargs[key] = _pair(raw, float)
        elif key == "median_kernel":
            kwargs[key] = tuple(int(p) for p in raw.split(","))
        elif key in ("hue_jitter", "sat_jitter", "val_jitter", "prob"):
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown key in [augment]: {key}")
    return AugmentConfig(**kwargs)


def _parse_postproc(items: dict[str, str]) -> PostprocParams:
    kwargs = {}
    for key, raw in items.items():
        if key in ("np_threshold", "boundary_threshold"):
            kwargs[key] = float(raw)
        elif key in ("sobel_aperture", "min_object_px", "marker_open_radius", "smooth_kernel"):
            kwargs[key] = int(raw)
        else:
            raise ValueError(f"unknown key in [postproc]: {key}")
    return PostprocParams(**kwargs)


def parse_config(text: str) -> CliConfig:
    """Parse configuration text; missing sections keep their defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"bad config: {exc}") from exc
    known = {"stack", "augment", "postproc", "metrics"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    stack = _parse_stack(dict(parser["stack"])) if parser.has_section("stack") else StackConfig()
    augment = (
        _parse_augment(dict(parser["augment"])) if parser.has_section("augment") else AugmentConfig()
    )
    postproc = (
        _parse_postproc(dict(parser["postproc"])) if parser.has_section("postproc") else PostprocParams()
    )
    iou = 0.5
    if parser.has_section("metrics"):
        for key, raw in parser["metrics"].items():
            if key == "iou_threshold":
                iou = float(raw)
                if iou < 0.5:
                    raise ValueError("iou_threshold must be >= 0.5")
            else:
                raise ValueError(f"unknown key in [metrics]: {key}")
    return CliConfig(stack, augment, postproc, iou)


def load_config(path) -> CliConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: CliConfig) -> str:
    """Serialize a configuration back to parseable text."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["stack"] = {
        "channel_order": ",".join(cfg.stack.channel_order),
        "clahe": "on" if cfg.stack.clahe is not None else "off",
        "derive_from_enhanced": str(cfg.stack.derive_from_enhanced).lower(),
    }
    if cfg.stack.clahe is not None:
        parser["stack"]["tile_grid"] = "{},{}".format(*cfg.stack.clahe.tile_grid)
        parser["stack"]["clip_limit"] = repr(cfg.stack.clahe.clip_limit)
    a = cfg.augment
    parser["augment"] = {
        "shear_deg": "{!r},{!r}".format(*a.shear_deg),
        "scale": "{!r},{!r}".format(*a.scale),
        "gauss_blur_sigma": "{!r},{!r}".format(*a.gauss_blur_sigma),
        "median_kernel": ",".join(str(k) for k in a.median_kernel),
        "noise_sigma": "{!r},{!r}".format(*a.noise_sigma),
        "hue_jitter": repr(a.hue_jitter),
        "sat_jitter": repr(a.sat_jitter),
        "val_jitter": repr(a.val_jitter),
        "prob": repr(a.prob),
    }
    p = cfg.postproc
    parser["postproc"] = {
        "np_threshold": repr(p.np_threshold),
        "sobel_aperture": str(p.sobel_aperture),
        "boundary_threshold": repr(p.boundary_threshold),
        "min_object_px": str(p.min_object_px),
        "marker_open_radius": str(p.marker_open_radius),
        "smooth_kernel": str(p.smooth_kernel),
    }
    parser["metrics"] = {"iou_threshold": repr(cfg.iou_threshold)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
