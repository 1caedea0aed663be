"""Parameter checkpoints: JSON map of name -> shape -> row-major values.

Keys are sorted and floats serialized with shortest round-trip repr, so
identical parameters always produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor


def save_params(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    doc = {
        "format": "gotstream-params-v1",
        "meta": meta or {},
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "gotstream-params-v1":
        raise ValueError(f"unrecognized checkpoint format in {path}")
    params = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = Tensor(arr, requires_grad=True)
    return params, doc.get("meta", {})
