"""Versioned JSON file holding tuned per-layer hyperparameters."""

import json

from .errors import DataValidationError
from .online import LayerHyper

SCHEMA = "regpred.hyperparameters/1"
_FIELDS = ("eta_a", "eta_n", "eta_sigma", "phi", "rho", "z0")


def dump_layers(layers) -> dict:
    return {
        "schema": SCHEMA,
        "layers": [
            {
                "eta_a": h.eta_a,
                "eta_n": h.eta_n,
                "eta_sigma": h.eta_sigma,
                "phi": h.phi,
                "rho": h.rho,
                "z0": [float(v) for v in h.z0],
            }
            for h in layers
        ],
    }


def parse_layers(doc) -> list[LayerHyper]:
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise DataValidationError(f"not a hyperparameter file (expected schema {SCHEMA!r})")
    layers = doc.get("layers")
    if not isinstance(layers, list) or not layers:
        raise DataValidationError("hyperparameter file has no layers")
    out = []
    for k, entry in enumerate(layers, start=1):
        missing = [f for f in _FIELDS if f not in entry]
        extra = sorted(set(entry) - set(_FIELDS))
        if missing or extra:
            raise DataValidationError(f"layer {k}: missing {missing} / unknown {extra}")
        out.append(LayerHyper(**{f: entry[f] for f in _FIELDS}))
    return out


def save_layers(path, layers) -> None:
    with open(path, "w") as fh:
        json.dump(dump_layers(layers), fh, indent=2)
        fh.write("\n")


def load_layers(path) -> list[LayerHyper]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: {exc}") from None
    return parse_layers(doc)
