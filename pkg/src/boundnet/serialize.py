"""JSON formats for nets, circuits, piecewise-linear functions and compile bundles.

Every document carries a ``schema`` tag.  Rationals are strings "num/den" (or
plain integers) so they round-trip exactly.  Net layers are written with dense
``weights`` when small and as sparse ``rows`` of [col, value] pairs otherwise;
the reader accepts both.
"""

from __future__ import annotations

import json
import os
from fractions import Fraction
from pathlib import Path

from .circuit import ThresholdCircuit, ThresholdGate
from .netir import NetLayer, ReluNet, q
from .univariate import PiecewiseLinear

NET_SCHEMA = "boundnet.net/1"
CIRCUIT_SCHEMA = "boundnet.circuit/1"
PWL_SCHEMA = "boundnet.pwl/1"
BUNDLE_SCHEMA = "boundnet.bundle/1"
DENSE_LIMIT = 4096  # entries per layer before switching to sparse rows

BUNDLE_FILES = {
    "net": "net.json",
    "source": "source.json",
    "rationalized": "rationalized.json",
    "circuit": "circuit.json",
    "options": "options.json",
    "metrics": "metrics.json",
    "report": "report.json",
}


class FormatError(ValueError):
    pass


def rat(v) -> str:
    v = q(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _parse(v) -> Fraction:
    try:
        return q(v) if not isinstance(v, float) else Fraction(repr(v))
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise FormatError(f"bad rational {v!r}") from e


def net_to_dict(net: ReluNet, dense: bool | None = None) -> dict:
    layers = []
    for layer in net.layers:
        use_dense = dense if dense is not None else layer.n_out * layer.n_in <= DENSE_LIMIT
        entry = {"activation": layer.activation, "biases": [rat(b) for b in layer.biases]}
        if use_dense:
            entry["weights"] = [[rat(w) for w in row] for row in layer.dense()]
            if not layer.rows:
                entry["n_in"] = layer.n_in
        else:
            entry["n_in"] = layer.n_in
            entry["rows"] = [[[c, rat(w)] for c, w in r] for r in layer.rows]
        layers.append(entry)
    return {"schema": NET_SCHEMA, "input_dim": net.input_dim, "label": net.label, "layers": layers}


def net_from_dict(doc: dict) -> ReluNet:
    if doc.get("schema", NET_SCHEMA) != NET_SCHEMA:
        raise FormatError(f"expected schema {NET_SCHEMA}, got {doc.get('schema')}")
    try:
        d = int(doc["input_dim"])
        layers = []
        width = d
        for entry in doc["layers"]:
            biases = [_parse(b) for b in entry["biases"]]
            if "rows" in entry:
                rows = [[(int(c), _parse(w)) for c, w in r] for r in entry["rows"]]
                layer = NetLayer.sparse(rows, biases, entry["activation"], int(entry["n_in"]))
            else:
                W = [[_parse(w) for w in r] for r in entry["weights"]]
                n_in = len(W[0]) if W else int(entry.get("n_in", width))
                if any(len(r) != n_in for r in W):
                    raise FormatError("ragged weight matrix")
                layer = NetLayer(tuple(tuple((c, w) for c, w in enumerate(r) if w) for r in W), tuple(biases), entry["activation"], n_in)
            layers.append(layer)
            width = layer.n_out
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed network document: {e}") from e
    return ReluNet(d, tuple(layers), doc.get("label", ""))


def circuit_to_dict(c: ThresholdCircuit) -> dict:
    return {
        "schema": CIRCUIT_SCHEMA,
        "input_bits": c.input_bits,
        "layers": [
            [{"inputs": list(g.inputs), "weights": [str(int(w)) for w in g.weights], "bias": str(int(g.bias))} for g in layer]
            for layer in c.layers
        ],
        "output_indices": list(c.output_indices),
        "meta": _jsonable(c.meta),
    }


def circuit_from_dict(doc: dict) -> ThresholdCircuit:
    if doc.get("schema", CIRCUIT_SCHEMA) != CIRCUIT_SCHEMA:
        raise FormatError(f"expected schema {CIRCUIT_SCHEMA}, got {doc.get('schema')}")
    try:
        layers = tuple(
            tuple(ThresholdGate(tuple(int(i) for i in g["inputs"]), tuple(int(w) for w in g["weights"]), int(g["bias"])) for g in layer)
            for layer in doc["layers"]
        )
        return ThresholdCircuit(int(doc["input_bits"]), layers, tuple(int(o) for o in doc["output_indices"]), doc.get("meta", {}))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed circuit document: {e}") from e


def pwl_to_dict(pwl: PiecewiseLinear) -> dict:
    return {
        "schema": PWL_SCHEMA,
        "breakpoints": [rat(a) for a in pwl.breakpoints],
        "slopes": [rat(s) for s in pwl.slopes],
        "anchor": rat(pwl.anchor_value),
    }


def pwl_from_dict(doc: dict) -> PiecewiseLinear:
    return PiecewiseLinear(
        tuple(_parse(a) for a in doc["breakpoints"]), tuple(_parse(s) for s in doc["slopes"]), _parse(doc["anchor"])
    )


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Fraction):
        return rat(v)
    if isinstance(v, int) and abs(v) >= 2**53:
        return str(v)
    return v


def dumps(doc) -> str:
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1) + "\n"


def write_json(path, doc) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})") from e


def load_net(path) -> ReluNet:
    return net_from_dict(read_json(path))


def save_net(net: ReluNet, path) -> None:
    write_json(path, net_to_dict(net))


def load_circuit(path) -> ThresholdCircuit:
    return circuit_from_dict(read_json(path))


def save_circuit(c: ThresholdCircuit, path) -> None:
    write_json(path, circuit_to_dict(c))


def write_bundle(path, *, net, source, rationalized, circuit, options, metrics, report) -> None:
    os.makedirs(path, exist_ok=True)
    p = Path(path)
    save_net(net, p / BUNDLE_FILES["net"])
    save_net(source, p / BUNDLE_FILES["source"])
    save_net(rationalized, p / BUNDLE_FILES["rationalized"])
    save_circuit(circuit, p / BUNDLE_FILES["circuit"])
    write_json(p / BUNDLE_FILES["options"], {"schema": BUNDLE_SCHEMA, **options})
    write_json(p / BUNDLE_FILES["metrics"], metrics)
    write_json(p / BUNDLE_FILES["report"], report)


def read_bundle(path) -> dict:
    p = Path(path)
    missing = [f for f in BUNDLE_FILES.values() if not (p / f).exists()]
    if missing:
        raise FormatError(f"bundle {path} lacks {', '.join(missing)}")
    opts = read_json(p / BUNDLE_FILES["options"])
    if opts.get("schema") != BUNDLE_SCHEMA:
        raise FormatError(f"expected schema {BUNDLE_SCHEMA}")
    return {
        "net": load_net(p / BUNDLE_FILES["net"]),
        "source": load_net(p / BUNDLE_FILES["source"]),
        "rationalized": load_net(p / BUNDLE_FILES["rationalized"]),
        "circuit": load_circuit(p / BUNDLE_FILES["circuit"]),
        "options": opts,
        "metrics": read_json(p / BUNDLE_FILES["metrics"]),
        "report": read_json(p / BUNDLE_FILES["report"]),
    }
