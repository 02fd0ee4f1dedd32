"""JSON market and scenario files.

Market file::

    {"label": "...", "costs": [...], "firms": [[0, 1], [2]],
     "demand": {"logit": {"alpha": 1.0, "delta": [...]}}}

The demand object has exactly one key, the family name, whose value holds
that family's parameters.  Mixed logit nests its mixing distribution the same
way: ``{"mixed_logit": {"mixing": {"lognormal": {"mu": 0, "sigma_ln": 0.5}},
"delta": [...]}}``.

Scenario file::

    {"market_ref": "market.json", "pre_partition": [...], "post_partition": [...]}

with an optional ``"p0"`` of observed pre-merger prices.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .demand import CES, Aids, GammaMixing, Linear, Logit, LogNormal, MixedLogit, NestedLogit
from .exceptions import InputError, UnsupportedDemand
from .market import build_market

FAMILIES = {
    "logit": (Logit, ("alpha", "delta"), ("scale_M",)),
    "nested_logit": (NestedLogit, ("alpha", "sigma_nest", "nest_of", "delta"), ("scale_M",)),
    "ces": (CES, ("sigma_ces", "delta"), ("budget_B",)),
    "mixed_logit": (MixedLogit, ("mixing", "delta"), ("scale_M", "quad_nodes")),
    "linear": (Linear, ("gamma_vec", "beta_mat"), ()),
    "aids": (Aids, ("alpha_vec", "gamma_mat", "beta_vec", "stone_weights"), ("budget_B",)),
}
MIXINGS = {
    "lognormal": (LogNormal, ("mu", "sigma_ln")),
    "gamma": (GammaMixing, ("shape_r", "rate_beta")),
}


class SchemaError(InputError):
    """Malformed market or scenario document; the message names the field."""


def _single_key(obj, where, choices):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise SchemaError(f"{where}: expected an object with one key from {sorted(choices)}")
    (key, val), = obj.items()
    if key not in choices:
        raise UnsupportedDemand(f"{where}: unknown kind {key!r}; expected one of {sorted(choices)}")
    if not isinstance(val, dict):
        raise SchemaError(f"{where}.{key}: expected an object of parameters")
    return key, val


def _params(where, val, required, optional):
    missing = [k for k in required if k not in val]
    if missing:
        raise SchemaError(f"{where}: missing field {missing[0]!r}")
    extra = set(val) - set(required) - set(optional)
    if extra:
        raise SchemaError(f"{where}: unknown field {sorted(extra)[0]!r}")
    return dict(val)


def demand_from_dict(obj, where="demand"):
    family, val = _single_key(obj, where, FAMILIES)
    cls, required, optional = FAMILIES[family]
    kw = _params(f"{where}.{family}", val, required, optional)
    if family == "mixed_logit":
        kind, mval = _single_key(kw["mixing"], f"{where}.{family}.mixing", MIXINGS)
        mcls, mreq = MIXINGS[kind]
        kw["mixing"] = mcls(**_params(f"{where}.{family}.mixing.{kind}", mval, mreq, ()))
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise type(exc)(f"{where}.{family}: {exc}") from exc
        raise SchemaError(f"{where}.{family}: {exc}") from exc


def demand_to_dict(spec):
    family = spec.family
    _, required, optional = FAMILIES[family]
    out = {}
    for k in required + optional:
        v = getattr(spec, k)
        if k == "mixing":
            _, mreq = MIXINGS[v.kind]
            v = {v.kind: {mk: float(getattr(v, mk)) for mk in mreq}}
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        out[k] = v
    return {family: out}


def market_from_dict(doc):
    if not isinstance(doc, dict):
        raise SchemaError("market: expected a JSON object")
    for key in ("costs", "firms", "demand"):
        if key not in doc:
            raise SchemaError(f"market: missing field {key!r}")
    extra = set(doc) - {"costs", "firms", "demand", "label"}
    if extra:
        raise SchemaError(f"market: unknown field {sorted(extra)[0]!r}")
    try:
        cost = np.asarray(doc["costs"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError("costs: expected a list of numbers") from exc
    demand = demand_from_dict(doc["demand"])
    try:
        return build_market(cost.size, cost, doc["firms"], demand, doc.get("label", ""))
    except InputError as exc:
        raise type(exc)(f"market: {exc}") from exc


def market_to_dict(market):
    return {
        "label": market.label,
        "costs": market.cost.tolist(),
        "firms": [list(f) for f in market.firms],
        "demand": demand_to_dict(market.demand),
    }


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def load_market(path):
    return market_from_dict(_read_json(path))


def load_scenario(path, market_path=None):
    """Return (market, pre_partition, post_partition, p0 or None)."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise SchemaError("scenario: expected a JSON object")
    for key in ("pre_partition", "post_partition"):
        if key not in doc:
            raise SchemaError(f"scenario: missing field {key!r}")
    if market_path is None:
        if "market_ref" not in doc:
            raise SchemaError("scenario: missing field 'market_ref'")
        market_path = os.path.join(os.path.dirname(os.path.abspath(path)), doc["market_ref"])
    market = load_market(market_path)
    p0 = doc.get("p0")
    if p0 is not None:
        p0 = np.asarray(p0, dtype=float)
        if p0.shape != (market.n_products,):
            raise SchemaError(f"scenario: p0 must have {market.n_products} entries")
    return market, doc["pre_partition"], doc["post_partition"], p0
