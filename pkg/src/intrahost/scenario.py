"""JSON scenario files: strict parsing into a model, options and initial state."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import IntrahostError
from .model import (ConstantRecruitment, LogisticRecruitment, ModelSpec, StrainParams,
                    validate_spec)
from .outcome import default_initial
from .simulate import IntegratorOptions


class ScenarioParseError(IntrahostError, ValueError):
    """The file is not well-formed JSON."""

    def __init__(self, msg: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {msg}")


class ScenarioError(IntrahostError, ValueError):
    """Well-formed JSON that does not describe a valid scenario."""


_TOP = {"model", "recruitment", "strains", "simulation", "initial"}
_MODEL = {"k", "n", "u", "include_gametocytes"}
_RECRUIT = {"constant": {"type", "lambda", "mu_x"},
            "logistic": {"type", "lambda", "mu_x", "s", "K"}}
_STRAIN = {"beta", "r", "gammas", "alphas", "mu_m", "delta", "mu_g"}
_SIM = {"t_end", "rtol", "atol", "extinction_eps", "samples", "max_step", "steady_tol"}
_INITIAL = {"x", "strains"}
_INITIAL_STRAIN = {"y", "g", "m"}


@dataclass(frozen=True, eq=False)
class Scenario:
    spec: ModelSpec
    options: IntegratorOptions
    initial: np.ndarray
    initial_given: bool
    document: dict

    def echo(self) -> str:
        """Compact single-line JSON that parses back to the same scenario."""
        return json.dumps(self.document, separators=(",", ":"), sort_keys=True)


def _keys(obj: Any, where: str, allowed: set, required: set = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")
    missing = sorted(required - set(obj))
    if missing:
        raise ScenarioError(f"{where}: missing key(s) {', '.join(map(repr, missing))}")
    return obj


def _num(obj: dict, key: str, where: str, default=None) -> float:
    if key not in obj:
        if default is None:
            raise ScenarioError(f"{where}: missing {key!r}")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ScenarioError(f"{where}.{key}: expected a finite number, got {val!r}")
    return float(val)


def _int(obj: dict, key: str, where: str) -> int:
    val = obj.get(key)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ScenarioError(f"{where}.{key}: expected an integer, got {val!r}")
    return val


def _vec(obj: dict, key: str, where: str, length: int) -> list[float]:
    val = obj.get(key)
    if not isinstance(val, list):
        raise ScenarioError(f"{where}.{key}: expected an array")
    if len(val) != length:
        raise ScenarioError(f"{where}.{key}: expected {length} entries, got {len(val)}")
    return [_num({"v": v}, "v", f"{where}.{key}") for v in val]


def _recruitment(doc: Any):
    if not isinstance(doc, dict) or doc.get("type") not in _RECRUIT:
        raise ScenarioError('recruitment.type: expected "constant" or "logistic"')
    _keys(doc, "recruitment", _RECRUIT[doc["type"]], _RECRUIT[doc["type"]])
    lam, mu_x = _num(doc, "lambda", "recruitment"), _num(doc, "mu_x", "recruitment")
    if doc["type"] == "constant":
        return ConstantRecruitment(lam=lam, mu_x=mu_x)
    return LogisticRecruitment(lam=lam, s=_num(doc, "s", "recruitment"),
                               K=_num(doc, "K", "recruitment"), mu_x=mu_x)


def _options(doc: Any) -> IntegratorOptions:
    _keys(doc, "simulation", _SIM)
    kw = {}
    for key in _SIM - {"samples"}:
        if key in doc:
            kw[key] = _num(doc, key, "simulation")
    if "samples" in doc:
        kw["samples"] = _int(doc, "samples", "simulation")
    return IntegratorOptions(**kw).validated()


def _initial(doc: Any, spec: ModelSpec) -> np.ndarray:
    _keys(doc, "initial", _INITIAL, _INITIAL)
    v = np.zeros(spec.dim)
    v[0] = _num(doc, "x", "initial")
    strains = doc["strains"]
    if not isinstance(strains, list) or len(strains) != spec.n:
        raise ScenarioError(f"initial.strains: expected an array of {spec.n} entries")
    for i, s in enumerate(strains):
        where = f"initial.strains[{i}]"
        _keys(s, where, _INITIAL_STRAIN, _INITIAL_STRAIN)
        v[spec.z_indices(i)[:-1]] = _vec(s, "y", where, spec.k)
        v[spec.g_index(i)] = _num(s, "g", where)
        v[spec.m_index(i)] = _num(s, "m", where)
    if np.any(v < 0):
        raise ScenarioError("initial: all components must be nonnegative")
    return v


def parse_scenario(doc: Any) -> Scenario:
    """Build a scenario from an already-decoded JSON document."""
    _keys(doc, "scenario", _TOP, {"model", "recruitment", "strains"})
    model = _keys(doc["model"], "model", _MODEL, {"k", "n", "u"})
    k, n = _int(model, "k", "model"), _int(model, "n", "model")
    if k < 1 or n < 1:
        raise ScenarioError("model: k and n must be >= 1")
    u = _num(model, "u", "model")
    gam_flag = model.get("include_gametocytes", True)
    if not isinstance(gam_flag, bool):
        raise ScenarioError("model.include_gametocytes: expected true or false")

    rows = doc["strains"]
    if not isinstance(rows, list) or len(rows) != n:
        raise ScenarioError(f"strains: expected an array of n={n} entries")
    strains = []
    for i, row in enumerate(rows):
        where = f"strains[{i}]"
        _keys(row, where, _STRAIN, _STRAIN - {"delta", "mu_g"})
        strains.append(StrainParams(
            beta=_num(row, "beta", where), r=_num(row, "r", where),
            gammas=_vec(row, "gammas", where, k), alphas=_vec(row, "alphas", where, k),
            mu_m=_num(row, "mu_m", where), delta=_num(row, "delta", where, 0.0),
            mu_g=_num(row, "mu_g", where, 1.0)))

    spec = ModelSpec.build(_recruitment(doc["recruitment"]), strains, u=u,
                           include_gametocytes=gam_flag)
    validate_spec(spec).raise_if_invalid()
    options = _options(doc.get("simulation", {}))
    given = "initial" in doc
    initial = _initial(doc["initial"], spec) if given else default_initial(spec)
    return Scenario(spec=spec, options=options, initial=initial, initial_given=given, document=doc)


def loads_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, exc.lineno, exc.colno) from None
    return parse_scenario(doc)


def load_scenario(path: str) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads_scenario(fh.read())
