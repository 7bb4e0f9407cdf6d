"""Multi-edge-type LDPC ensembles.

An ensemble is stored in node perspective: one row per variable-node type
``(coeff, b, d)`` and one row per check-node type ``(coeff, d)``. Degree
columns follow the order used in published tables, so edge type 1 is the
first column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "EnsembleError",
    "VariableRow",
    "CheckRow",
    "EnsembleSpec",
    "PolyRow",
    "EdgePerspective",
    "SocketReport",
    "parse_ensemble",
    "serialize_ensemble",
    "load_ensemble",
    "builtin_ensemble",
    "BUILTIN_ENSEMBLES",
    "validate_sockets",
    "nominal_rate",
    "edge_perspective",
]


class EnsembleError(ValueError):
    """Raised for malformed or inconsistent ensemble descriptions."""


@dataclass(frozen=True)
class VariableRow:
    coeff: float
    b: tuple[int, ...]
    d: tuple[int, ...]


@dataclass(frozen=True)
class CheckRow:
    coeff: float
    d: tuple[int, ...]


@dataclass(frozen=True)
class EnsembleSpec:
    n_edge_types: int
    n_channels: int
    variable_rows: tuple[VariableRow, ...]
    check_rows: tuple[CheckRow, ...]
    name: str = ""

    @property
    def n_slots(self) -> int:
        """Received-distribution slots, including the punctured slot 0."""
        return self.n_channels + 1

    def nu_total(self) -> float:
        return math.fsum(r.coeff for r in self.variable_rows)

    def mu_total(self) -> float:
        return math.fsum(r.coeff for r in self.check_rows)

    def punctured_fraction(self) -> float:
        """Fraction nu(1,1) carried by variable nodes attached to slot 0."""
        return math.fsum(r.coeff for r in self.variable_rows if r.b[0] == 1)


@dataclass(frozen=True)
class PolyRow:
    """One monomial ``coeff * r**b * x**d``; ``b`` is empty for check polynomials."""

    coeff: float
    b: tuple[int, ...]
    d: tuple[int, ...]


@dataclass(frozen=True)
class EdgePerspective:
    lambda_polys: tuple[tuple[PolyRow, ...], ...]
    rho_polys: tuple[tuple[PolyRow, ...], ...]


@dataclass(frozen=True)
class SocketReport:
    edge: int
    variable_sockets: float
    check_sockets: float
    balanced: bool


def _int_vector(value, length: int, what: str) -> tuple[int, ...]:
    if not isinstance(value, list):
        raise EnsembleError(f"{what} must be a list")
    if len(value) != length:
        raise EnsembleError(f"{what} has length {len(value)}, expected {length}")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
            raise EnsembleError(f"{what} entries must be integers, got {v!r}")
        if v < 0:
            raise EnsembleError(f"{what} entries must be nonnegative, got {v!r}")
        out.append(int(v))
    return tuple(out)


def _coeff(value, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EnsembleError(f"{what} must be a number, got {value!r}")
    if not math.isfinite(value) or value < 0:
        raise EnsembleError(f"{what} must be a nonnegative finite number, got {value!r}")
    return float(value)


def _positive_int(doc: dict, key: str) -> int:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise EnsembleError(f"{key!r} must be a positive integer, got {v!r}")
    return v


def _spec_from_dict(doc, name: str = "") -> EnsembleSpec:
    if not isinstance(doc, dict):
        raise EnsembleError("ensemble document must be a JSON object")
    n_e = _positive_int(doc, "n_edge_types")
    n_r = _positive_int(doc, "n_channels")
    vrows_raw = doc.get("variable_nodes")
    crows_raw = doc.get("check_nodes")
    if not isinstance(vrows_raw, list) or not vrows_raw:
        raise EnsembleError("'variable_nodes' must be a non-empty list")
    if not isinstance(crows_raw, list) or not crows_raw:
        raise EnsembleError("'check_nodes' must be a non-empty list")

    vrows = []
    for k, row in enumerate(vrows_raw):
        if not isinstance(row, dict):
            raise EnsembleError(f"variable_nodes[{k}] must be an object")
        coeff = _coeff(row.get("coeff"), f"variable_nodes[{k}].coeff")
        b = _int_vector(row.get("b"), n_r + 1, f"variable_nodes[{k}].b")
        d = _int_vector(row.get("d"), n_e, f"variable_nodes[{k}].d")
        if sum(b) != 1 or max(b) != 1:
            raise EnsembleError(f"variable_nodes[{k}].b must select exactly one slot")
        if not any(d):
            raise EnsembleError(f"variable_nodes[{k}].d has no edges")
        vrows.append(VariableRow(coeff, b, d))

    crows = []
    for k, row in enumerate(crows_raw):
        if not isinstance(row, dict):
            raise EnsembleError(f"check_nodes[{k}] must be an object")
        coeff = _coeff(row.get("coeff"), f"check_nodes[{k}].coeff")
        d = _int_vector(row.get("d"), n_e, f"check_nodes[{k}].d")
        if not any(d):
            raise EnsembleError(f"check_nodes[{k}].d has no edges")
        crows.append(CheckRow(coeff, d))

    return EnsembleSpec(n_e, n_r, tuple(vrows), tuple(crows), name=name or str(doc.get("name", "")))


def parse_ensemble(text: str, name: str = "") -> EnsembleSpec:
    """Parse an ensemble description from its JSON text."""
    if not text or not text.strip():
        raise EnsembleError("empty ensemble document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnsembleError(f"malformed ensemble document: {exc}") from exc
    return _spec_from_dict(doc, name=name)


def serialize_ensemble(spec: EnsembleSpec) -> str:
    doc = {
        "n_edge_types": spec.n_edge_types,
        "n_channels": spec.n_channels,
        "variable_nodes": [
            {"coeff": r.coeff, "b": list(r.b), "d": list(r.d)} for r in spec.variable_rows
        ],
        "check_nodes": [{"coeff": r.coeff, "d": list(r.d)} for r in spec.check_rows],
    }
    if spec.name:
        doc["name"] = spec.name
    return json.dumps(doc, indent=2)


def load_ensemble(path: str | Path) -> EnsembleSpec:
    path = Path(path)
    return parse_ensemble(path.read_text(), name=path.stem)


BUILTIN_ENSEMBLES = {
    "table1": "table1_rate002.json",
    "table2": "table2_rate005.json",
    "table3": "table3_rate01.json",
    "table4": "table4_rate05.json",
    "regular36": "regular_3_6.json",
}


def builtin_ensemble(key: str) -> EnsembleSpec:
    """Return one of the bundled ensembles (``table1`` ... ``table4``, ``regular36``)."""
    try:
        fname = BUILTIN_ENSEMBLES[key]
    except KeyError:
        raise EnsembleError(f"unknown builtin ensemble {key!r}") from None
    text = resources.files("metexit.data").joinpath(fname).read_text()
    return parse_ensemble(text, name=key)


def _socket_counts(spec: EnsembleSpec) -> tuple[np.ndarray, np.ndarray]:
    v = np.zeros(spec.n_edge_types)
    c = np.zeros(spec.n_edge_types)
    for r in spec.variable_rows:
        v += r.coeff * np.asarray(r.d, dtype=float)
    for r in spec.check_rows:
        c += r.coeff * np.asarray(r.d, dtype=float)
    return v, c


def validate_sockets(spec: EnsembleSpec, rtol: float = 1e-9) -> list[SocketReport]:
    """Per-edge socket counts nu_{x_i}(1,1) and mu_{x_i}(1); imbalance is reported, not raised."""
    v, c = _socket_counts(spec)
    out = []
    for i in range(spec.n_edge_types):
        scale = max(abs(v[i]), abs(c[i]))
        balanced = scale > 0 and abs(v[i] - c[i]) <= rtol * scale
        out.append(SocketReport(i + 1, float(v[i]), float(c[i]), bool(balanced)))
    return out


def nominal_rate(spec: EnsembleSpec) -> float:
    """``nu(1,1) - mu(1)``."""
    return spec.nu_total() - spec.mu_total()


def _derivative_rows(rows: Iterable, i: int, with_b: bool) -> list[PolyRow]:
    out = []
    for r in rows:
        if r.d[i] == 0:
            continue
        d = list(r.d)
        d[i] -= 1
        out.append(PolyRow(r.coeff * r.d[i], tuple(r.b) if with_b else (), tuple(d)))
    return out


def edge_perspective(spec: EnsembleSpec) -> EdgePerspective:
    lam, rho = [], []
    for i in range(spec.n_edge_types):
        vrows = _derivative_rows(spec.variable_rows, i, True)
        crows = _derivative_rows(spec.check_rows, i, False)
        vs = math.fsum(r.coeff for r in vrows)
        cs = math.fsum(r.coeff for r in crows)
        if vs <= 0 or cs <= 0:
            raise EnsembleError(f"edge type {i + 1} has no sockets")
        lam.append(tuple(PolyRow(r.coeff / vs, r.b, r.d) for r in vrows))
        rho.append(tuple(PolyRow(r.coeff / cs, r.b, r.d) for r in crows))
    return EdgePerspective(tuple(lam), tuple(rho))
