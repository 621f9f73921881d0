import json
from importlib import resources
from pathlib import Path

from .types import Electrode, Montage, ValidationError

DEFAULT_MONTAGE_FILE = "montage_1020_19.json"


def montage_from_dict(doc: dict) -> Montage:
    try:
        electrodes = [
            Electrode(str(e["label"]), float(e["x"]), float(e["y"]), float(e["z"]))
            for e in doc["electrodes"]
        ]
        return Montage(name=str(doc["name"]), electrodes=electrodes, radius=float(doc["radius"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed montage document: {exc}") from exc


def montage_to_dict(montage: Montage) -> dict:
    return {
        "name": montage.name,
        "radius": montage.radius,
        "electrodes": [
            {"label": e.label, "x": e.x, "y": e.y, "z": e.z} for e in montage.electrodes
        ],
    }


def load_montage(path=None) -> Montage:
    """Load a montage JSON file, or the shipped 19-channel 10/20 montage when ``path`` is None."""
    if path is None:
        text = resources.files("graph_bendr.data").joinpath(DEFAULT_MONTAGE_FILE).read_text()
    else:
        text = Path(path).read_text()
    return montage_from_dict(json.loads(text))


def save_montage(montage: Montage, path) -> None:
    Path(path).write_text(json.dumps(montage_to_dict(montage), indent=1))


def default_montage() -> Montage:
    return load_montage(None)
