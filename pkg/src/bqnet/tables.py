"""Truncated occupancy tables and their CSV / JSON serialisations.

A :class:`LatticePMF` holds probabilities for every occupancy vector n
with sum(n) <= cap, in graded lexicographic order, together with the
unassigned tail mass. Both the analytic recursion and the simulator emit
the same CSV schema (``n_1,...,n_J,prob[,stderr,replications]``) so the
compare tooling can treat them uniformly.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .errors import ValidationError

ENTRY_CLAMP = -1e-12
MASS_TOL = 1e-9


def simplex_vectors(J, cap):
    """All nonnegative integer J-vectors with total <= cap, graded lex order."""
    out = []
    for total in range(cap + 1):
        out.extend(_compositions(total, J))
    return out


def _compositions(total, parts):
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return out


class SimplexIndex:
    """Shared index over the simplex {n : sum(n) <= cap}."""

    def __init__(self, J, cap):
        self.J, self.cap = J, cap
        self.vectors = simplex_vectors(J, cap)
        self.position = {v: i for i, v in enumerate(self.vectors)}
        self.array = np.array(self.vectors, dtype=np.int64)

    def __len__(self):
        return len(self.vectors)


class LatticePMF:
    """Probabilities on the occupancy simplex plus explicit tail mass."""

    def __init__(self, J, cap, values, tail_mass=None, meta=None):
        self.J, self.cap = int(J), int(cap)
        self.index = values if isinstance(values, SimplexIndex) else None
        if isinstance(values, dict):
            idx = SimplexIndex(J, cap)
            arr = np.zeros(len(idx))
            for vec, p in values.items():
                arr[idx.position[tuple(int(v) for v in vec)]] = p
            self.index, self.values = idx, arr
        else:
            self.index = meta.pop("_index") if meta and "_index" in meta else SimplexIndex(J, cap)
            self.values = np.asarray(values, dtype=float)
            if self.values.shape != (len(self.index),):
                raise ValidationError("lattice values do not match the simplex size")
        clamped = int(np.sum((self.values < 0) & (self.values >= ENTRY_CLAMP)))
        if np.any(self.values < ENTRY_CLAMP):
            worst = float(self.values.min())
            raise ValidationError(f"lattice entry {worst} is below the clamp floor")
        self.values = np.maximum(self.values, 0.0)
        assigned = float(self.values.sum())
        if assigned > 1.0 + MASS_TOL:
            raise ValidationError(f"assigned lattice mass {assigned} exceeds 1")
        self.tail_mass = (1.0 - assigned) if tail_mass is None else float(tail_mass)
        if self.tail_mass < -MASS_TOL:
            raise ValidationError(f"tail mass {self.tail_mass} is below -{MASS_TOL}")
        self.meta = dict(meta or {})
        if clamped:
            self.meta.setdefault("clamped_entries", clamped)

    @property
    def assigned_mass(self):
        return float(self.values.sum())

    def prob(self, n):
        """P(N = n); zero outside the stored simplex."""
        key = tuple(int(v) for v in n)
        pos = self.index.position.get(key)
        return 0.0 if pos is None else float(self.values[pos])

    def items(self):
        return zip(self.index.vectors, self.values)

    # -- serialisation ----------------------------------------------------------

    def to_csv(self, path):
        write_occupancy_csv(path, self.J,
                            [(vec, p) for vec, p in self.items()])

    def to_json_dict(self):
        doc = {
            "kind": "occupancy-pmf",
            "J": self.J,
            "cap": self.cap,
            "tail_mass": self.tail_mass,
            "entries": [[*map(int, vec), float(p)] for vec, p in self.items()],
        }
        for key in ("t", "quadrature_nodes"):
            if key in self.meta:
                doc[key] = self.meta[key]
        return doc

    def to_json(self, path):
        dump_json(path, self.to_json_dict())

    @classmethod
    def from_json_dict(cls, doc):
        J, cap = int(doc["J"]), int(doc["cap"])
        values = {tuple(row[:-1]): row[-1] for row in doc["entries"]}
        meta = {k: doc[k] for k in ("t", "quadrature_nodes") if k in doc}
        return cls(J, cap, values, tail_mass=doc.get("tail_mass"), meta=meta)


def canonical_json(doc):
    """Serialise a JSON document so reload + re-serialise is byte-identical."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      allow_nan=False) + "\n"


def dump_json(path, doc):
    with open(path, "w") as fh:
        fh.write(canonical_json(doc))


def write_occupancy_csv(path, J, rows, stderr=False, replications=None):
    """Write the shared occupancy table schema.

    ``rows`` yields ``(vector, prob)`` or ``(vector, prob, stderr)`` when
    ``stderr`` is set; ``replications`` (a single count) adds the final
    column.
    """
    header = [f"n_{k}" for k in range(1, J + 1)] + ["prob"]
    if stderr:
        header.append("stderr")
    if replications is not None:
        header.append("replications")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            vec, rest = row[0], row[1:]
            out = [int(v) for v in vec] + [repr(float(x)) for x in rest]
            if replications is not None:
                out.append(replications)
            writer.writerow(out)


def read_occupancy_csv(path):
    """Read an occupancy table; returns (J, {vector: prob}, extras).

    ``extras`` maps optional column names (stderr, replications) to
    per-vector dictionaries.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValidationError(f"{path}: empty occupancy table")
        J = 0
        while J < len(header) and header[J] == f"n_{J + 1}":
            J += 1
        if J == 0 or J >= len(header) or header[J] != "prob":
            raise ValidationError(
                f"{path}: header must be n_1,...,n_J,prob[,stderr,replications]")
        optional = header[J + 1:]
        if any(name not in ("stderr", "replications") for name in optional):
            raise ValidationError(f"{path}: unexpected columns {optional}")
        probs, extras = {}, {name: {} for name in optional}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path} line {line_no}: wrong column count")
            try:
                vec = tuple(int(x) for x in row[:J])
                prob = float(row[J])
            except ValueError:
                raise ValidationError(f"{path} line {line_no}: malformed entry")
            if prob < 0 or not math.isfinite(prob):
                raise ValidationError(f"{path} line {line_no}: invalid probability")
            probs[vec] = prob
            for offset, name in enumerate(optional):
                extras[name][vec] = float(row[J + 1 + offset])
        return J, probs, extras
