"""JSON and CSV formats for models, structures and sampled data."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import StructureError
from .lti import AdditiveModel, TransferFunction

FLOAT_FMT = "{:.17g}"


class SchemaError(StructureError):
    """Input file does not match the expected schema."""


def fmt(x: float) -> str:
    return FLOAT_FMT.format(float(x))


# --- models -----------------------------------------------------------------


def model_to_dict(model: AdditiveModel, h: float | None = None) -> dict[str, Any]:
    d: dict[str, Any] = {}
    if h is not None:
        d["h"] = float(h)
    d["submodels"] = [
        {"num": g.num.coeffs.tolist(), "den": g.den.coeffs.tolist()} for g in model.subs
    ]
    d["structure"] = [list(p) for p in model.structure]
    return d


def model_from_dict(d: Any) -> AdditiveModel:
    if not isinstance(d, dict) or not isinstance(d.get("submodels"), list) or not d["submodels"]:
        raise SchemaError("model JSON needs a non-empty 'submodels' list")
    subs = []
    for k, s in enumerate(d["submodels"], start=1):
        if not isinstance(s, dict) or "num" not in s or "den" not in s:
            raise SchemaError(f"submodel {k}: needs 'num' and 'den' lists")
        try:
            num = [float(v) for v in s["num"]]
            den = [float(v) for v in s["den"]]
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"submodel {k}: coefficients must be numbers") from exc
        if not den or den[0] != 1.0:
            raise SchemaError(f"submodel {k}: den[0] must equal 1 (anti-monic)")
        try:
            subs.append(TransferFunction(num, den))
        except StructureError as exc:
            raise SchemaError(f"submodel {k}: {exc}") from exc
    structure = d.get("structure") or ()
    try:
        model = AdditiveModel(tuple(subs), tuple(tuple(p) for p in structure))
        model.validate()
    except (StructureError, TypeError, ValueError) as exc:
        raise SchemaError(str(exc)) from exc
    return model


def load_model(path) -> tuple[AdditiveModel, float | None]:
    d = _load_json(path)
    h = d.get("h") if isinstance(d, dict) else None
    return model_from_dict(d), (float(h) if h is not None else None)


def save_model(path, model: AdditiveModel, h: float | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, h), indent=2))


# --- structures ---------------------------------------------------------------


def structure_from_json(d: Any) -> tuple[tuple[int, int], ...]:
    """Accept ``[[n, m], ...]`` or ``{"structure": [[n, m], ...]}``."""
    if isinstance(d, dict):
        d = d.get("structure")
    if not isinstance(d, list) or not d:
        raise SchemaError("structure must be a non-empty list of [n_i, m_i] pairs")
    pairs = []
    for k, p in enumerate(d, start=1):
        if (
            not isinstance(p, (list, tuple))
            or len(p) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in p)
        ):
            raise SchemaError(f"structure entry {k}: expected [n_i, m_i] integers, got {p!r}")
        pairs.append((p[0], p[1]))
    return tuple(pairs)


def load_structure(path):
    return structure_from_json(_load_json(path))


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from exc


# --- sampled data -------------------------------------------------------------


@dataclass
class SampledData:
    """Uniformly sampled records ``u(kh)``, ``y(kh)`` (``y`` may be absent)."""

    u: np.ndarray
    y: np.ndarray | None
    h: float | None = None

    @property
    def N(self) -> int:
        return self.u.size


def read_csv(path, h: float | None = None, require=("u",)) -> dict[str, np.ndarray]:
    """Read a numeric CSV with a header; error messages carry line numbers.

    A time column ``t`` is checked against ``k * h`` (tolerance 1e-9) when
    ``h`` is given.
    """
    cols: dict[str, list[float]] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise SchemaError(f"{path}: line 1: missing header")
        header = [c.strip() for c in header]
        for name in require:
            if name not in header:
                raise SchemaError(f"{path}: line 1: missing column '{name}'")
        for c in header:
            cols[c] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            for c, v in zip(header, row):
                try:
                    cols[c].append(float(v))
                except ValueError as exc:
                    raise SchemaError(f"{path}: line {lineno}: column '{c}': not a number: {v!r}") from exc
    out = {c: np.asarray(v) for c, v in cols.items()}
    n = len(next(iter(out.values())))
    if "k" in out:
        k = out["k"]
        bad = np.flatnonzero(k != np.arange(n))
        if bad.size:
            raise SchemaError(f"{path}: line {bad[0] + 2}: column 'k' must count 0, 1, 2, ...")
    elif "t" in out and h is not None:
        bad = np.flatnonzero(np.abs(out["t"] - np.arange(n) * h) > 1e-9)
        if bad.size:
            raise SchemaError(f"{path}: line {bad[0] + 2}: column 't' is not k*h (h={h})")
    return out


def write_csv(path, columns: dict[str, Any]) -> None:
    names = list(columns)
    n = len(columns[names[0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(n):
            row = []
            for c in names:
                v = columns[c][k]
                if isinstance(v, (float, np.floating)):
                    row.append(fmt(v))
                else:
                    row.append(v)
            w.writerow(row)
