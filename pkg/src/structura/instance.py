"""JSON instance and gold files.

An instance lists the variable scores and the attached factors::

    {"num_variables": 3, "eta": [0.5, 0.3, 0.1],
     "factors": [{"type": "xor", "vars": [0, 1, 2]}]}

Files are validated against ``schema/instance.schema.json`` before any
factor is built; errors name the offending record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from . import factors as fk
from .graph import FactorGraph, GraphError
from .loss import GoldAssignment, GoldError


class InstanceError(ValueError):
    """The instance or gold file is malformed."""


@dataclass
class Instance:
    graph: FactorGraph
    eta: np.ndarray
    eta_n: list


@lru_cache(maxsize=None)
def load_schema(name: str = "instance") -> dict:
    text = resources.files("structura").joinpath(f"schema/{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _validate(doc, name):
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        where = _path(err.absolute_path)
        if len(err.absolute_path) >= 2 and err.absolute_path[0] == "factors":
            where = f"factor record {err.absolute_path[1]} ({where})"
        raise InstanceError(f"{where}: {err.message}")


def _sequence(rec, d):
    trans = rec.get("transition")
    states = rec.get("states")
    if states is None:
        arr = np.asarray(trans, dtype=float)
        if arr.ndim == 0:
            raise GraphError("sequence: a scalar transition needs 'states'")
        states = arr.shape[-1]
    factor = fk.Sequence(states)
    L = factor.length(d)
    if trans is None:
        return factor, np.zeros(factor.n_additional(d))
    arr = np.asarray(trans, dtype=float)
    if arr.ndim == 0:
        arr = arr * np.eye(states)  # scalar scores staying in the same state
    if arr.shape == (states, states):
        arr = np.broadcast_to(arr, (max(L - 1, 0), states, states))
    if arr.shape != (max(L - 1, 0), states, states):
        raise GraphError(f"sequence: transition shape {arr.shape} does not fit {L} positions x {states} states")
    return factor, arr.ravel()


def build_factor(rec: dict, d: int):
    """Return ``(factor, eta_n)`` for one record over ``d`` variables."""
    kind = rec["type"]
    if kind == "xor":
        return fk.Xor(), None
    if kind == "or":
        return fk.Or(), None
    if kind == "atmostone":
        return fk.AtMostOne(), None
    if kind == "budget":
        return fk.Budget(rec["budget"]), None
    if kind == "knapsack":
        return fk.Knapsack(rec["costs"], rec["budget"]), None
    if kind == "orout":
        return fk.OrOut(), None
    if kind == "negated":
        inner, _ = build_factor(rec["inner"], d)
        if not isinstance(inner, fk._Logic):
            raise GraphError(f"negated: inner kind {rec['inner']['type']!r} is not a logic factor")
        if len(rec["mask"]) != d:
            raise GraphError(f"negated: mask has length {len(rec['mask'])}, expected {d}")
        return fk.Negated(inner, rec["mask"]), None
    if kind == "pair":
        c = rec.get("coupling", 0.0)
        if isinstance(c, list):
            return fk.Pair("joint"), np.asarray(c, dtype=float)
        return fk.Pair("coupling"), np.array([float(c)])
    if kind == "sequence":
        return _sequence(rec, d)
    if kind == "tree":
        return fk.Tree(single_root=rec.get("single_root", False)), None
    if kind == "assignment":
        return fk.Assignment(), None
    if kind == "dense":
        return fk.Dense(rec["structures"], rec.get("additionals")), rec.get("eta_add")
    raise GraphError(f"unknown factor type {kind!r}")


def parse_instance(doc: dict) -> Instance:
    _validate(doc, "instance")
    n = doc["num_variables"]
    eta = np.asarray(doc["eta"], dtype=float)
    if eta.shape != (n,):
        raise InstanceError(f"eta: has length {eta.shape[0]}, expected num_variables={n}")
    graph = FactorGraph()
    graph.add_variables(n)
    for i, rec in enumerate(doc["factors"]):
        try:
            factor, eta_n = build_factor(rec, len(rec["vars"]))
            graph.add(factor, rec["vars"], eta_n)
        except (GraphError, ValueError) as exc:
            raise InstanceError(f"factor record {i}: {exc}") from exc
    try:
        graph.finalize()
    except GraphError as exc:
        raise InstanceError(str(exc)) from exc
    return Instance(graph, eta, [att.eta_n for att in graph.factors])


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InstanceError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: invalid JSON ({exc})") from exc


def load_instance(path) -> Instance:
    return parse_instance(_read_json(path))


def parse_gold(doc: dict, graph: FactorGraph) -> GoldAssignment:
    """``{"m": [...]}`` gives the global vector; ``{"factors": [{"m", "n"}]}``
    gives per-factor structures, checked for agreement."""
    _validate(doc, "gold")
    try:
        if "m" in doc:
            return GoldAssignment.from_global(graph, doc["m"])
        recs = doc["factors"]
        return GoldAssignment.from_local(graph, [r["m"] for r in recs], [r.get("n") for r in recs])
    except GoldError as exc:
        raise InstanceError(f"gold: {exc}") from exc


def load_gold(path, graph: FactorGraph) -> GoldAssignment:
    return parse_gold(_read_json(path), graph)
