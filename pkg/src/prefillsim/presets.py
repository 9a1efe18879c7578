"""Preset loading: structured text files describing models and GPUs.

A preset file is UTF-8 text with one `key = value` pair per line; blank
lines and `#` comments are ignored. Model presets carry ModelGeometry
fields, GPU presets carry GpuSpec fields. The bundled presets live in
the package's presets/ directory; set PREFILLSIM_PRESETS to point the
loader at a different directory.
"""

from __future__ import annotations

import os
from importlib import resources
from pathlib import Path

from .geometry import GeometryError, GpuSpec, ModelGeometry

PRESET_DIR_ENV = "PREFILLSIM_PRESETS"

MODEL_FIELDS = {
    "num_layers": int,
    "hidden_size": int,
    "num_kv_heads": int,
    "head_dim": int,
    "intermediate_size": int,
    "weight_bytes": int,
    "kv_dtype_bytes": int,
    "act_dtype_bytes": int,
    "act_overhead_factor": float,
}

GPU_FIELDS = {
    "total_memory": int,
    "linear_rate": float,
    "attn_rate": float,
    "fixed_overhead": float,
    "link_bandwidth": float,
    "has_nvlink": bool,
}


class PresetError(GeometryError):
    """Missing or malformed preset file."""


def _parse_kv_text(text: str, path: str) -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PresetError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise PresetError(f"{path}:{lineno}: empty key or value")
        if key in pairs:
            raise PresetError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _coerce(pairs: dict[str, str], fields: dict[str, type], path: str) -> dict:
    out = {}
    for key, value in pairs.items():
        if key == "kind":
            continue
        if key not in fields:
            raise PresetError(f"{path}: unknown key {key!r}")
        typ = fields[key]
        try:
            if typ is bool:
                if value.lower() not in ("true", "false"):
                    raise ValueError(value)
                out[key] = value.lower() == "true"
            elif typ is int:
                out[key] = int(float(value))  # allow 24e9 style literals
            else:
                out[key] = typ(value)
        except ValueError as exc:
            raise PresetError(f"{path}: bad value for {key!r}: {value!r}") from exc
    missing = [k for k in fields if k not in out]
    if missing:
        raise PresetError(f"{path}: missing keys {missing}")
    return out


def preset_dir() -> Path | None:
    override = os.environ.get(PRESET_DIR_ENV)
    return Path(override) if override else None


def _read_preset_text(name: str) -> tuple[str, str]:
    filename = f"{name}.preset"
    override = preset_dir()
    if override is not None:
        path = override / filename
        if not path.is_file():
            raise PresetError(f"preset {name!r} not found in {override}")
        return path.read_text(encoding="utf-8"), str(path)
    ref = resources.files(__package__).joinpath("presets", filename)
    if not ref.is_file():
        raise PresetError(f"unknown preset {name!r} (no bundled {filename})")
    return ref.read_text(encoding="utf-8"), f"presets/{filename}"


def load_model(name: str) -> ModelGeometry:
    text, path = _read_preset_text(name)
    pairs = _parse_kv_text(text, path)
    if pairs.get("kind", "model") != "model":
        raise PresetError(f"{path}: not a model preset")
    return ModelGeometry(name=name, **_coerce(pairs, MODEL_FIELDS, path))


def load_gpu(name: str) -> GpuSpec:
    text, path = _read_preset_text(name)
    pairs = _parse_kv_text(text, path)
    if pairs.get("kind", "gpu") != "gpu":
        raise PresetError(f"{path}: not a gpu preset")
    return GpuSpec(name=name, **_coerce(pairs, GPU_FIELDS, path))


def bundled_presets() -> list[str]:
    """Names of the presets shipped with the package."""
    override = preset_dir()
    if override is not None:
        return sorted(p.stem for p in override.glob("*.preset"))
    ref = resources.files(__package__).joinpath("presets")
    return sorted(p.name[: -len(".preset")] for p in ref.iterdir() if p.name.endswith(".preset"))


BUNDLED_PAIRINGS = {
    # GPU preset -> model preset it is evaluated with
    "l4": "llama-3.1-8b",
    "a100": "qwen-32b-fp8",
    "h100": "llama-3.3-70b-fp8",
    "h100-nvlink": "llama-3.3-70b-fp8",
}
