"""Strict JSON run configuration.

Every section and key is optional, but unknown keys, wrong types and
out-of-range values are rejected with the offending line number.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from .analytic import DetectionParams, ModelConfig, NextGenParams, next_generation
from .layouts import LAYOUT_ORDER, BeamRegion, beam_region
from .physics import MEASURED_WIDTHS, CorrelationWidths, OpticsParams, SourceParams
from .simulate import SimConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path or '<config>'}" + (f":{line}" if line else "")
        super().__init__(f"{where}: {message}")


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _number(lo=None, hi=None, lo_open=False):
    def check(v):
        if not _is_number(v):
            return "must be a finite number"
        if lo is not None and (v <= lo if lo_open else v < lo):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None

    return check


def _integer(lo=None, hi=None):
    def check(v):
        if not isinstance(v, int) or isinstance(v, bool):
            return "must be an integer"
        if lo is not None and v < lo:
            return f"must be >= {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None

    return check


def _boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def _string(v):
    return None if isinstance(v, str) and v else "must be a non-empty string"


def _optional(check):
    return lambda v: None if v is None else check(v)


def _pair_of_ints(v):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(c, int) and not isinstance(c, bool) for c in v)):
        return "must be a list of two integers"
    return None


def _layouts(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list"
    bad = [x for x in v if x not in LAYOUT_ORDER]
    return f"unknown layout(s) {bad}; choose from {list(LAYOUT_ORDER)}" if bad else None


def _spacing_list(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list of numbers"
    if not all(_is_number(s) and s >= 1 for s in v):
        return "spacings must be numbers >= 1"
    return None


def _spacings(v):
    if isinstance(v, dict):
        bad = [k for k in v if k not in LAYOUT_ORDER]
        if bad:
            return f"unknown layout(s) {bad}"
        for msg in map(_spacing_list, v.values()):
            if msg:
                return msg
        return None
    return _spacing_list(v)


POS = _number(0, lo_open=True)
NONNEG = _number(0)
FRACTION = _number(0, 1)

SECTIONS: dict[str, dict[str, Callable[[Any], str | None]]] = {
    "src": {
        "pump_width_um": POS,
        "crystal_length_mm": POS,
        "pump_wavelength_nm": POS,
        "pair_rate": NONNEG,
        "alpha_const": _number(0, 1, lo_open=True),
    },
    "w": {"delta_r": POS, "sigma_r": POS, "delta_k": POS, "sigma_k": POS},
    "opt": {
        "pixel_pitch_um": POS,
        "magnification": POS,
        "focal_length_mm": POS,
        "spdc_wavelength_nm": POS,
        "timing_resolution_ns": POS,
    },
    "det": {
        "eta_s": FRACTION,
        "eta_i": FRACTION,
        "tau_ns": NONNEG,
        "background_rate": NONNEG,
        "pixels_n": _optional(_integer(1)),
        "acquisition_s": POS,
    },
    "region": {"center": _pair_of_ints, "pixel_count": _integer(1)},
    "next_gen_params": {
        "eta": _number(0, 1, lo_open=True),
        "tau_ns": POS,
        "resolution_gain": POS,
        "timing_resolution_ns": POS,
    },
}

SCALARS: dict[str, Callable[[Any], str | None]] = {
    "split_ratio": _number(0, 1, lo_open=True),
    "duration_s": NONNEG,
    "seed": _integer(0, 2**64 - 1),
    "rate_scale": POS,
    "slice_s": POS,
    "deconvolve_pixels": _boolean,
    "workers": _integer(1),
    "layouts": _layouts,
    "spacings": _spacings,
    "d_max": _optional(_integer(2)),
    "output_dir": _string,
    "next_gen": _boolean,
}


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    layouts: tuple[str, ...] = LAYOUT_ORDER
    spacings: Any = None  # None: the default ladder for the chosen detector
    d_max: int | None = None
    output_dir: str | None = None
    next_gen: bool = False
    next_gen_params: NextGenParams = field(default_factory=NextGenParams)
    workers: int = 1

    def model(self) -> ModelConfig:
        s = self.sim
        m = ModelConfig(
            source=s.src,
            widths=s.w,
            detection=s.det,
            optics=s.opt,
            region=s.region,
            split_ratio=s.split_ratio,
        )
        return next_generation(m, self.next_gen_params) if self.next_gen else m


def _locate(raw: str, path: tuple[str, ...]) -> int | None:
    """1-based line of the last key in ``path``, searching nested keys in order."""
    pos = 0
    for key in path:
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(raw, pos)
        if m is None:
            return None
        pos = m.start()
    return raw.count("\n", 0, pos) + 1


def _reject_duplicates(pairs):
    keys = [k for k, _ in pairs]
    dup = {k for k in keys if keys.count(k) > 1}
    if dup:
        raise ConfigError(f"duplicate key(s) {sorted(dup)}")
    return dict(pairs)


def parse_config(raw: str, path: str | None = None) -> RunConfig:
    try:
        doc = json.loads(raw, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[1], None, path) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object", 1, path)

    def fail(keys: tuple[str, ...], msg: str):
        raise ConfigError(f"{'.'.join(keys)}: {msg}", _locate(raw, keys), path)

    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                fail((key,), "must be an object")
            for sub, v in value.items():
                if sub not in SECTIONS[key]:
                    fail((key, sub), f"unknown key; expected one of {sorted(SECTIONS[key])}")
                msg = SECTIONS[key][sub](v)
                if msg:
                    fail((key, sub), msg)
        elif key in SCALARS:
            msg = SCALARS[key](doc[key])
            if msg:
                fail((key,), msg)
        else:
            fail((key,), f"unknown key; expected one of {sorted(set(SECTIONS) | set(SCALARS))}")

    def build(key, cls, default=None):
        section = doc.get(key, {})
        try:
            if default is not None:
                base = {f.name: getattr(default, f.name) for f in fields(cls)}
                base.update(section)
                return cls(**base)
            return cls(**section)
        except ValueError as exc:
            fail((key,), str(exc))

    src = build("src", SourceParams)
    w = build("w", CorrelationWidths, MEASURED_WIDTHS)
    opt = build("opt", OpticsParams)
    det = build("det", DetectionParams)
    ng = build("next_gen_params", NextGenParams)
    region_doc = doc.get("region", {})
    try:
        region: BeamRegion = beam_region(
            tuple(region_doc.get("center", (64, 64))), region_doc.get("pixel_count", 4293)
        )
    except ValueError as exc:
        fail(("region",), str(exc))
    sim_keys = ("split_ratio", "duration_s", "seed", "rate_scale", "slice_s", "deconvolve_pixels")
    try:
        sim = SimConfig(src=src, w=w, opt=opt, det=det, region=region,
                        **{k: doc[k] for k in sim_keys if k in doc})
    except ValueError as exc:
        msg = str(exc)
        culprit = next((k for k in sim_keys + ("det", "region") if k in msg), None)
        if culprit is None and "eta" in msg:
            culprit = "det"
        fail((culprit,) if culprit in doc else (), msg)
    spacings = doc.get("spacings")
    if isinstance(spacings, dict):
        spacings = {k: tuple(v) for k, v in spacings.items()}
    elif spacings is not None:
        spacings = tuple(spacings)
    return RunConfig(
        sim=sim,
        layouts=tuple(doc.get("layouts", LAYOUT_ORDER)),
        spacings=spacings,
        d_max=doc.get("d_max"),
        output_dir=doc.get("output_dir"),
        next_gen=doc.get("next_gen", False),
        next_gen_params=ng,
        workers=doc.get("workers", 1),
    )


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        raw = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from exc
    return parse_config(raw, str(p))
