"""Factor graphs with degree reweighting.

A graph owns a set of binary variables and an ordered list of factor
attachments. After :meth:`FactorGraph.finalize`, every variable ``j`` has a
degree ``deg(j)`` (number of attachments covering it) and a weight
``delta[j] = sqrt(deg(j))``. The reweighted selector maps are never stored as
matrices; they are realized by :meth:`FactorGraph.scatter` and
:meth:`FactorGraph.gather` through flat slot-to-variable index arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or attachments."""


@dataclass
class FactorAttachment:
    """A factor bound to an ordered list of global variables.

    ``factor`` is a kind object from :mod:`structura.factors` carrying the
    kind-specific parameters. ``eta_n`` holds the additional scores of the
    factor; it is empty for kinds without additional statistics.
    """

    factor: Any
    variables: np.ndarray
    eta_n: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.variables = np.asarray(self.variables, dtype=np.int64).ravel()
        if self.eta_n is None:
            self.eta_n = np.zeros(0)
        self.eta_n = np.asarray(self.eta_n, dtype=float).ravel()

    @property
    def degree(self) -> int:
        return len(self.variables)


@dataclass
class GlobalScores:
    """Variable scores for a graph."""

    eta_m: np.ndarray

    def __post_init__(self):
        self.eta_m = np.asarray(self.eta_m, dtype=float).ravel()
        if not np.all(np.isfinite(self.eta_m)):
            raise GraphError("variable scores must be finite")


class FactorGraph:
    """Mutable builder that becomes immutable after :meth:`finalize`."""

    def __init__(self, num_variables: int = 0):
        self.num_variables = 0
        self.factors: list[FactorAttachment] = []
        self.finalized = False
        self.degrees: np.ndarray | None = None
        self.delta: np.ndarray | None = None
        if num_variables:
            self.add_variables(num_variables)

    def _check_mutable(self):
        if self.finalized:
            raise GraphError("graph is finalized and cannot be modified")

    def add_variables(self, n: int) -> range:
        self._check_mutable()
        if int(n) != n or n < 1:
            raise GraphError(f"add_variables expects a positive count, got {n!r}")
        start = self.num_variables
        self.num_variables += int(n)
        return range(start, self.num_variables)

    def attach_factor(self, att: FactorAttachment) -> int:
        self._check_mutable()
        idx = att.variables
        if idx.size == 0:
            raise GraphError("factor must cover at least one variable")
        if idx.min() < 0 or idx.max() >= self.num_variables:
            raise GraphError(
                f"variable index out of range [0, {self.num_variables}): {idx.tolist()}"
            )
        if len(np.unique(idx)) != len(idx):
            raise GraphError(f"duplicate variable in factor: {idx.tolist()}")
        att.factor.validate(len(idx), att.eta_n)
        self.factors.append(att)
        return len(self.factors) - 1

    def add(self, factor, variables: Sequence[int], eta_n=None) -> int:
        """Shorthand for ``attach_factor(FactorAttachment(...))``."""
        if eta_n is None:
            eta_n = factor.default_eta_n(len(variables))
        return self.attach_factor(FactorAttachment(factor, variables, eta_n))

    def finalize(self) -> "FactorGraph":
        if self.finalized:
            return self
        if not self.factors:
            raise GraphError("graph has no factors")
        deg = np.zeros(self.num_variables, dtype=np.int64)
        for att in self.factors:
            deg[att.variables] += 1
        uncovered = np.flatnonzero(deg == 0)
        if uncovered.size:
            raise GraphError(f"variables not covered by any factor: {uncovered.tolist()}")
        self.degrees = deg
        self.delta = np.sqrt(deg.astype(float))
        self.slot_var = np.concatenate([att.variables for att in self.factors])
        self.slot_delta = self.delta[self.slot_var]
        sizes = [att.degree for att in self.factors]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.finalized = True
        return self

    @property
    def num_slots(self) -> int:
        return int(self.offsets[-1])

    def _check_final(self):
        if not self.finalized:
            raise GraphError("graph must be finalized first")

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        """Cut a stacked slot vector into per-factor pieces."""
        return [flat[self.offsets[f]:self.offsets[f + 1]] for f in range(len(self.factors))]

    def scatter_flat(self, mu: np.ndarray) -> np.ndarray:
        self._check_final()
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.num_variables,):
            raise GraphError(f"expected vector of length {self.num_variables}, got {mu.shape}")
        return mu[self.slot_var] / self.slot_delta

    def gather_flat(self, v: np.ndarray) -> np.ndarray:
        self._check_final()
        v = np.asarray(v, dtype=float)
        if v.shape != (self.num_slots,):
            raise GraphError(f"expected stacked vector of length {self.num_slots}, got {v.shape}")
        # bincount accumulates in slot order, which pins the reduction order
        acc = np.bincount(self.slot_var, weights=v, minlength=self.num_variables)
        return acc / self.delta

    def scatter(self, mu: np.ndarray) -> list[np.ndarray]:
        return self.split(self.scatter_flat(mu))

    def gather(self, local: Sequence[np.ndarray]) -> np.ndarray:
        if len(local) != len(self.factors):
            raise GraphError(f"expected {len(self.factors)} local vectors, got {len(local)}")
        for f, (v, att) in enumerate(zip(local, self.factors)):
            if np.shape(v) != (att.degree,):
                raise GraphError(f"factor {f}: expected length {att.degree}, got {np.shape(v)}")
        return self.gather_flat(np.concatenate([np.asarray(v, dtype=float) for v in local]))

    def factor_delta(self, f: int) -> np.ndarray:
        return self.slot_delta[self.offsets[f]:self.offsets[f + 1]]
