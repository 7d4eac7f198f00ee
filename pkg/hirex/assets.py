"""Assets utilities."""

from pathlib import Path
import json


ASSETS_DIR = Path(__file__).parent / "assets"
"""Assets directory."""
assert ASSETS_DIR.is_dir()

_PRESETS_FILE = ASSETS_DIR / "presets.json"


def _import_presets() -> dict[str, dict]:
    with open(_PRESETS_FILE, encoding="utf-8") as f:
        raw_data = json.load(f)
    for preset_name, preset in raw_data.items():
        assert isinstance(preset, dict), f"Preset {preset_name!r} is not an object"
    return raw_data


PRESETS = _import_presets()
"""Training presets by name."""

PRESET_NAMES = tuple(PRESETS.keys())
"""Preset names."""


def get_preset(name: str, /) -> dict:
    """A copy of the config overrides of preset *name*."""
    return dict(PRESETS[name])


__all__ = (
    "get_preset",
    "PRESET_NAMES",
)
