"""Model documents.

A model is stored as one JSON object::

    {"format_version": 1, "task": ..., "schema": [...], "x_names": [...],
     "standardization": {"min": [...], "max": [...]}, "loss": ..., "rate": ...,
     "scheme": ..., "truncation": ..., "unseen": ..., "beta0": [...],
     "iterations": [{"b": 0, "trees": {"0": [node, ...], ...}}, ...]}

Each tree is a flat node array in depth-first order; internal nodes carry
``column``, child indices ``left``/``right`` and either ``threshold`` or
``levels_left``/``levels_right`` (level codes).  Reals are written in the
shortest decimal form that round-trips.
"""

from __future__ import annotations

import json

from ..core import ActionSchema, IterationRecord, Loss, Scheme, StandardizationParams, Task, VcmModel
from ..errors import ModelFormatError
from ..tree import DecisionTree

FORMAT_VERSION = 1


def to_document(model: VcmModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "task": model.task.value,
        "schema": model.schema.to_dict(),
        "x_names": list(model.x_names),
        "standardization": model.standardization.to_dict(),
        "loss": model.loss.value,
        "rate": float(model.rate),
        "scheme": model.scheme.value,
        "truncation": None if model.truncation is None else float(model.truncation),
        "unseen": model.unseen,
        "beta0": [float(v) for v in model.beta0],
        "iterations": [
            {"b": rec.b, "trees": {str(j): tree.to_nodes() for j, tree in rec.trees.items()}}
            for rec in model.iterations
        ],
    }


def from_document(doc: dict) -> VcmModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        loss = Loss(doc["loss"])
        if Task(doc["task"]) is not loss.task:
            raise ModelFormatError("task does not match loss")
        return VcmModel(
            schema=ActionSchema.from_dict(doc["schema"]),
            standardization=StandardizationParams.from_dict(doc["standardization"]),
            loss=loss,
            beta0=doc["beta0"],
            rate=float(doc["rate"]),
            iterations=tuple(
                IterationRecord({int(j): DecisionTree.from_nodes(nodes) for j, nodes in rec["trees"].items()},
                                int(rec["b"]))
                for rec in doc["iterations"]
            ),
            scheme=Scheme(doc["scheme"]),
            truncation=doc["truncation"],
            x_names=tuple(doc["x_names"]),
            unseen=doc["unseen"],
        )
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ModelFormatError(f"malformed model document: {exc!r}") from None


def dumps(model: VcmModel) -> str:
    return json.dumps(to_document(model), separators=(",", ":"), allow_nan=False) + "\n"


def loads(text: str) -> VcmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    return from_document(doc)


def save_model(model: VcmModel, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


def load_model(path) -> VcmModel:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except FileNotFoundError:
        raise ModelFormatError(f"no such model file: {path}") from None
