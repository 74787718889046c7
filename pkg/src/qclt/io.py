"""Model files, state sections and CSV/JSON artifacts.

A model file is JSON::

    {
      "n": 8, "local_dims": [2, 2, ...], "boundary": "open",
      "builder": "ising", "params": {"B": 1.0, "J": 1.0},
      "state": {"builder": "all-up"}
    }

``builder`` may be ``ising``, ``harmonic`` or ``custom``; custom models carry
``custom_terms = {"site_terms": [...], "bond_terms": [...]}`` where every
matrix is either a nested array (real numbers or ``[re, im]`` pairs) or
``{"base64": ..., "shape": [r, c], "dtype": "complex128"}`` holding the raw
little-endian bytes.  The optional ``state`` section is either
``{"locals": [[[re, im], ...], ...]}`` or
``{"builder": "all-up" | "all-down" | "all-plus" | "random", "seed": int}``.
"""
from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .model import Boundary, ModelSpec, build_harmonic, build_ising
from .state import ProductState, named_state, product_state

__all__ = [
    "MODEL_SCHEMA",
    "ModelFileError",
    "encode_matrix",
    "decode_matrix",
    "model_to_dict",
    "model_from_dict",
    "load_model",
    "save_model",
    "state_to_dict",
    "state_from_dict",
    "spec_hash",
    "state_hash",
    "canonical_json",
    "atomic_write_text",
    "measure_csv",
    "measure_json",
    "trace_csv",
    "transition_csv",
]


class ModelFileError(ValueError):
    """Malformed model or state description."""


_MATRIX = {
    "oneOf": [
        {
            "type": "array",
            "items": {
                "type": "array",
                "items": {
                    "oneOf": [
                        {"type": "number"},
                        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    ]
                },
            },
        },
        {
            "type": "object",
            "required": ["base64", "shape"],
            "properties": {
                "base64": {"type": "string"},
                "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "dtype": {"enum": ["complex128"]},
            },
            "additionalProperties": False,
        },
    ]
}

STATE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "required": ["locals"],
            "properties": {
                "locals": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    },
                }
            },
        },
        {
            "required": ["builder"],
            "properties": {
                "builder": {"enum": ["all-up", "all-down", "all-plus", "random"]},
                "seed": {"type": "integer"},
            },
        },
    ],
}

MODEL_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qclt model file",
    "type": "object",
    "required": ["builder"],
    "properties": {
        "n": {"type": "integer", "minimum": 1},
        "local_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "boundary": {"enum": ["open", "periodic"]},
        "builder": {"enum": ["ising", "harmonic", "custom"]},
        "params": {"type": "object"},
        "custom_terms": {
            "type": "object",
            "required": ["site_terms", "bond_terms"],
            "properties": {
                "site_terms": {"type": "array", "items": _MATRIX},
                "bond_terms": {"type": "array", "items": _MATRIX},
            },
        },
        "state": STATE_SCHEMA,
    },
}


def encode_matrix(mat, fmt: str = "nested") -> object:
    mat = np.asarray(mat, dtype=complex)
    if fmt == "base64":
        raw = np.ascontiguousarray(mat, dtype="<c16").tobytes()
        return {"base64": base64.b64encode(raw).decode("ascii"), "shape": list(mat.shape), "dtype": "complex128"}
    if not np.any(mat.imag):
        return [[float(x) for x in row] for row in mat.real]
    return [[[float(x.real), float(x.imag)] for x in row] for row in mat]


def decode_matrix(obj) -> np.ndarray:
    if isinstance(obj, dict):
        raw = base64.b64decode(obj["base64"])
        return np.frombuffer(raw, dtype="<c16").reshape(obj["shape"]).astype(complex)
    rows = []
    for row in obj:
        rows.append([complex(x[0], x[1]) if isinstance(x, list) else complex(x) for x in row])
    return np.array(rows, dtype=complex)


def model_to_dict(spec: ModelSpec, fmt: str = "nested") -> dict:
    doc = {
        "n": spec.n,
        "local_dims": list(spec.local_dims),
        "boundary": spec.boundary.value,
        "builder": spec.builder,
        "params": dict(spec.params),
    }
    if spec.builder == "custom":
        doc["custom_terms"] = {
            "site_terms": [encode_matrix(m, fmt) for m in spec.site_terms],
            "bond_terms": [encode_matrix(m, fmt) for m in spec.bond_terms],
        }
    return doc


def model_from_dict(doc: dict, n: int | None = None) -> ModelSpec:
    """Build a :class:`ModelSpec`; ``n`` overrides the file's chain length for builders."""
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelFileError(f"invalid model file: {exc.message}") from exc
    builder = doc["builder"]
    params = doc.get("params", {})
    boundary = doc.get("boundary", "open")
    try:
        if builder == "custom":
            if "custom_terms" not in doc or "n" not in doc:
                raise ModelFileError("custom models need n and custom_terms")
            if n is not None and n != doc["n"]:
                raise ModelFileError("cannot override n for a custom model")
            terms = doc["custom_terms"]
            dims = doc.get("local_dims") or [decode_matrix(m).shape[0] for m in terms["site_terms"]]
            return ModelSpec(
                n=doc["n"],
                local_dims=dims,
                site_terms=[decode_matrix(m) for m in terms["site_terms"]],
                bond_terms=[decode_matrix(m) for m in terms["bond_terms"]],
                boundary=Boundary(boundary),
            )
        size = n if n is not None else doc.get("n")
        if size is None:
            raise ModelFileError("chain length n missing (give it in the file or on the command line)")
        if builder == "ising":
            return build_ising(size, float(params.get("B", 1.0)), float(params.get("J", 1.0)), boundary)
        return build_harmonic(
            size,
            float(params.get("mass", 1.0)),
            float(params.get("omega", 1.0)),
            int(params.get("d_trunc", 8)),
            boundary,
        )
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"invalid model file: {exc}") from exc


def load_model(path, n: int | None = None) -> tuple[ModelSpec, dict]:
    """Read a model file; returns the spec and the raw document."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFileError("model file must contain a JSON object")
    return model_from_dict(doc, n=n), doc


def save_model(spec: ModelSpec, path, fmt: str = "nested", state: dict | None = None) -> None:
    doc = model_to_dict(spec, fmt)
    if state is not None:
        doc["state"] = state
    atomic_write_text(path, canonical_json(doc))


def state_to_dict(state: ProductState) -> dict:
    return {"locals": [[[float(x.real), float(x.imag)] for x in v] for v in state.locals]}


def state_from_dict(doc: dict, spec: ModelSpec) -> ProductState:
    try:
        jsonschema.validate(doc, STATE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelFileError(f"invalid state section: {exc.message}") from exc
    if "locals" in doc:
        vecs = [[complex(re, im) for re, im in v] for v in doc["locals"]]
        try:
            return product_state(vecs, spec)
        except ValueError as exc:
            raise ModelFileError(str(exc)) from exc
    return named_state(spec, doc["builder"], seed=int(doc.get("seed", 0)))


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, Boundary):
        return obj.value
    return obj


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def spec_hash(spec: ModelSpec) -> str:
    return _digest(model_to_dict(spec.with_terms(), "base64"))


def state_hash(state: ProductState) -> str:
    return _digest(state_to_dict(state))


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def measure_csv(measure) -> str:
    """``value,weight`` for exact measures, ``grid,density`` for KPM ones."""
    header = ("value", "weight") if measure.kind == "exact" else ("grid", "density")
    return _csv(header, zip(measure.values, measure.weights))


def measure_json(measure, spec: ModelSpec | None = None, state: ProductState | None = None, tolerances=None) -> str:
    doc = {
        "kind": measure.kind,
        "method": measure.meta.get("method", measure.kind),
        "M": measure.n_moments,
        "kernel": measure.kernel,
        "shift": measure.shift,
        "factor": measure.factor,
        "meta": measure.meta,
        "values": measure.values,
        "weights": measure.weights,
    }
    if spec is not None:
        doc["model_hash"] = spec_hash(spec)
    if state is not None:
        doc["state_hash"] = state_hash(state)
    if tolerances is not None:
        doc["tolerances"] = tolerances
    return canonical_json(doc)


def trace_csv(trace) -> str:
    """``t,fidelity,gaussian_model,deviation`` rows of a fidelity trace."""
    rows = zip(trace.times, trace.fidelity, trace.gaussian_model, np.abs(trace.fidelity - trace.gaussian_model))
    return _csv(("t", "fidelity", "gaussian_model", "deviation"), rows)


def transition_csv(times, probabilities) -> str:
    """``t,probability`` rows of a transition trace."""
    return _csv(("t", "probability"), zip(times, probabilities))
