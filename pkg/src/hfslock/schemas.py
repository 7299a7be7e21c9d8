"""Access to the JSON schemas shipped with the package."""
import json
from functools import lru_cache
from importlib import resources

NAMES = ("fit_result", "predictions", "mg_offset", "linearize_sidecar", "lock_stats", "manifest")


@lru_cache(maxsize=None)
def load(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}; known: {', '.join(NAMES)}")
    text = resources.files("hfslock").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)
