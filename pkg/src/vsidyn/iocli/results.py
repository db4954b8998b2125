"""Self-contained JSON result documents."""
from __future__ import annotations

import json
import platform
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..sequences import Trace

SCHEMA_VERSION = "1.0"


def tool_version() -> str:
    from .. import __version__

    return __version__


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("result.schema.json").read_text())


def jsonable(obj):
    """Recursively convert numpy values and dataclass-like objects for JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return {"real": obj.real.tolist(), "imag": obj.imag.tolist()}
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if hasattr(obj, "as_dict"):
        return jsonable(obj.as_dict())
    return obj


def trace_record(name: str, trace: Trace) -> dict:
    meta = {k: v for k, v in trace.meta.items() if k != "final_rho"}
    if "final_rho" in trace.meta:
        meta["final_populations"] = np.real(np.diag(trace.meta["final_rho"]))
    return {
        "name": name,
        "times": trace.times,
        "pl": trace.pl,
        "sigma": trace.sigma,
        "exposure": trace.exposure,
        "meta": meta,
    }


def trace_from_record(rec: dict) -> Trace:
    sigma = rec.get("sigma")
    return Trace(np.array(rec["times"]), np.array(rec["pl"]), {"name": rec["name"]}, None if sigma is None else np.array(sigma), rec.get("exposure", 1.0))


def result_document(command: str, config: dict, seed: int, traces=(), fit=None, abc=None, extra=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "traces": [trace_record(n, t) for n, t in traces],
        "fit": fit,
        "abc": abc,
        "extra": extra or {},
        "provenance": {
            "seed": seed,
            "tool_version": tool_version(),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "python": platform.python_version(),
        },
    }
    doc = jsonable(doc)
    jsonschema.validate(doc, schema())
    return doc


def write_document(doc: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")
    return path


def read_document(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    jsonschema.validate(doc, schema())
    return doc
