"""Command-line driver.  JSON report on stdout, a human table on stderr.

Exit status: 0 success, 1 contract violation, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction

import numpy as np

from . import serialize as ser
from .circuit import CircuitError, circuit_metrics, eval_circuit, validate_circuit
from .gadgets import FixedPointFormat, GadgetError, iterated_addition_gadget, multiplication_gadget, relu_gadget
from .harness import DistributionSpec, estimate_l2_diff, exhaustive_grid_l2, eval_net_float_batch, sample
from .lowering import GridSpec, RationalizeError, add_clip_layer, clamp
from .netir import NetError, eval_net_exact_batch, net_metrics, validate_net
from .pipeline import (
    CompileError,
    CompileOptions,
    SubstitutionError,
    check_compiled,
    compile_bounded_weights,
    compiled_from_parts,
    substitute_circuit_block,
)
from .univariate import collapse_to_depth2, extract_pwl

OK, VIOLATION, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _frac(s: str) -> Fraction:
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as e:
        raise argparse.ArgumentTypeError(f"not a rational: {s!r}") from e


def _table(rows) -> str:
    rows = [(str(k), str(v)) for k, v in rows]
    w = max((len(k) for k, _ in rows), default=0)
    return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def _emit(report: dict, table_rows) -> None:
    sys.stdout.write(ser.dumps(report))
    sys.stderr.write(_table(table_rows) + "\n")


def _metrics_dict(m) -> dict:
    return {k: (ser.rat(v) if isinstance(v, Fraction) else list(v) if isinstance(v, tuple) else v) for k, v in vars(m).items()}


def _compiled_report(comp) -> dict:
    cm = circuit_metrics(comp.circuit)
    cert = comp.rationalized.certificate
    return {
        "k": comp.source_depth,
        "d": comp.net.input_dim,
        "depth": comp.net.depth,
        "expected_depth": 3 * comp.source_depth + 3,
        "circuit_depth": cm.depth,
        "expected_circuit_depth": 3 * comp.source_depth + 1,
        "width": comp.metrics.width,
        "size": comp.metrics.size,
        "max_abs_weight": comp.metrics.max_abs_weight,
        "max_abs_bias": comp.metrics.max_abs_bias,
        "source_max_abs_weight": comp.source_metrics.max_abs_weight,
        "weight_bound": comp.weight_bound,
        "weight_bound_gadget": comp.options.gadget,
        "C": comp.fmt.C,
        "t": comp.fmt.t,
        "circuit_width": cm.width,
        "circuit_max_abs_weight": cm.max_abs_weight,
        "rationalize": {
            "method": comp.rationalized.method,
            "check_mode": cert.mode,
            "worst_residual": cert.worst_residual,
            "near_boundary_points": len(cert.near_boundary),
            "doublings": cert.refinements,
        },
    }


def cmd_compile(a) -> int:
    net = ser.load_net(a.net)
    diags = validate_net(net)
    if diags:
        raise UsageError("; ".join(diags))
    grid = GridSpec(a.R, a.p)
    opts = CompileOptions(gadget=a.gadget, discrete=a.discrete, seed=a.seed)
    try:
        comp = compile_bounded_weights(net, grid, a.B, a.p_prime, opts)
    except (CompileError, RationalizeError) as e:
        rep = {"command": "compile", "status": "violation", "error": str(e)}
        if getattr(e, "witness", None) is not None:
            rep["witness"] = [ser.rat(v) for v in e.witness]
        _emit(rep, [("status", "violation"), ("error", e)])
        return VIOLATION
    report = {"command": "compile", "status": "ok", **_compiled_report(comp)}
    if a.out:
        metrics = {
            "net": _metrics_dict(comp.metrics),
            "source": _metrics_dict(comp.source_metrics),
            "circuit": _metrics_dict(circuit_metrics(comp.circuit)),
            "weight_bound": comp.weight_bound,
        }
        ser.write_bundle(
            a.out,
            net=comp.net,
            source=net,
            rationalized=comp.rationalized.net,
            circuit=comp.circuit,
            options=comp.options_record(),
            metrics=metrics,
            report=report,
        )
        report["bundle"] = a.out
    _emit(report, [
        ("k", comp.source_depth),
        ("compiled depth", f"{comp.net.depth} (3k+3 = {3 * comp.source_depth + 3})"),
        ("circuit depth", f"{comp.circuit.depth} (3k+1 = {3 * comp.source_depth + 1})"),
        ("width", comp.metrics.width),
        ("max |weight|", comp.metrics.max_abs_weight),
        ("source max |weight|", comp.source_metrics.max_abs_weight),
        ("declared bound", f"{comp.weight_bound} ({comp.options.gadget})"),
        ("C, t", f"{comp.fmt.C}, {comp.fmt.t}"),
    ])
    return OK


def _load_compiled(path):
    b = ser.read_bundle(path)
    o = b["options"]
    grid = GridSpec(Fraction(o["R"]), int(o["p"]))
    opts = CompileOptions(gadget=o["gadget"], discrete=o["discrete"], seed=o["seed"])
    fmt = FixedPointFormat(int(o["C"]), int(o["t"]))
    comp = compiled_from_parts(
        b["source"], b["rationalized"], b["circuit"], grid, Fraction(o["B"]), int(o["p_prime"]), fmt, opts,
        Fraction(o["delta"]), net=b["net"],
    )
    return comp, b


def cmd_verify(a) -> int:
    comp, b = _load_compiled(a.bundle)
    diags = check_compiled(comp)
    report = {"command": "verify", "mode": a.mode, "structural": diags or "ok"}
    rows = [("structural", "; ".join(diags) or "ok")]
    status = OK if not diags else VIOLATION
    B, src, d = comp.B, b["source"], comp.net.input_dim
    clipped = add_clip_layer(src, B)
    if a.mode == "grid":
        if comp.grid.size(d) > a.cap:
            raise UsageError(f"grid has {comp.grid.size(d)} points; raise --cap or use --mode mc")
        pts = comp.grid.points(d)
        out = [v[0] for v in eval_net_exact_batch(comp.net, pts)]
        ref = [clamp(v[0], B) for v in eval_net_exact_batch(src, pts)]
        ref2 = [clamp(v[0], B) for v in eval_net_exact_batch(b["rationalized"], pts)]
        res = [abs(x - y) for x, y in zip(out, ref)]
        path_res = max(abs(x - y) for x, y in zip(out, ref2))
        j = max(range(len(pts)), key=lambda i: (res[i], -i))
        tol = Fraction(1, comp.p_prime)
        rep = exhaustive_grid_l2(comp.net, clipped, comp.grid, d)
        report.update({
            "grid_points": len(pts),
            "worst_residual": res[j],
            "worst_point": [ser.rat(v) for v in pts[j]],
            "tolerance": tol,
            "circuit_path_residual": path_res,
            "l2": rep.as_dict(),
        })
        rows += [("grid points", len(pts)), ("worst residual", f"{res[j]} at {[str(v) for v in pts[j]]}"),
                 ("tolerance 1/p'", tol), ("circuit-path residual", path_res), ("exact L2", rep.l2_estimate)]
        if res[j] > tol or path_res != 0:
            status = VIOLATION
    else:
        dist = DistributionSpec.uniform_box(comp.grid.R, d)
        rep = estimate_l2_diff(comp.net, clipped, dist, a.n, a.seed)
        X = sample(dist, a.n, a.seed)
        y = eval_net_float_batch(comp.net, X)[:, 0]
        lo, hi = float(y.min()), float(y.max())
        in_range = bool(lo >= -float(B) - 1e-9 and hi <= 5 * float(B) + 1e-9)
        report.update({"l2": rep.as_dict(), "output_min": lo, "output_max": hi, "range_ok": in_range,
                       "failure_budget": comp.quantizer_spec.failure_budget})
        rows += [("L2 estimate", f"{rep.l2_estimate:.6g} +- {rep.standard_error:.3g} (n={a.n}, seed={a.seed})"),
                 ("output range", f"[{lo:.6g}, {hi:.6g}]")]
        if not in_range:
            status = VIOLATION
    report["status"] = "ok" if status == OK else "violation"
    rows.append(("status", report["status"]))
    _emit(report, rows)
    return status


def cmd_collapse(a) -> int:
    net = ser.load_net(a.net)
    try:
        pwl = extract_pwl(net)
    except NetError as e:
        raise UsageError(str(e)) from e
    out = collapse_to_depth2(pwl)
    if a.out:
        ser.save_net(out, a.out)
    report = {"command": "collapse", "status": "ok", "pieces": pwl.pieces, "depth": out.depth,
              "width": net_metrics(out).width, "pwl": ser.pwl_to_dict(pwl)}
    _emit(report, [("pieces", pwl.pieces), ("collapsed depth", out.depth), ("width", net_metrics(out).width)])
    return OK


def cmd_circuit_eval(a) -> int:
    c = ser.load_circuit(a.circuit)
    bits = [int(ch) for ch in a.bits if ch in "01"]
    if len(bits) != len(a.bits.replace(",", "").replace(" ", "")):
        raise UsageError("--bits takes a string of 0/1 characters")
    try:
        out = eval_circuit(c, bits)
    except CircuitError as e:
        raise UsageError(str(e)) from e
    _emit({"command": "circuit-eval", "status": "ok", "inputs": bits, "outputs": out},
          [("inputs", "".join(map(str, bits))), ("outputs", "".join(map(str, out)))])
    return OK


def cmd_stats(a) -> int:
    if bool(a.net) == bool(a.circuit):
        raise UsageError("stats takes exactly one of --net or --circuit")
    if a.net:
        net = ser.load_net(a.net)
        m = net_metrics(net)
        diags = validate_net(net)
        report = {"command": "stats", "kind": "net", **_metrics_dict(m), "diagnostics": diags}
    else:
        c = ser.load_circuit(a.circuit)
        m = circuit_metrics(c)
        diags = validate_circuit(c)
        report = {"command": "stats", "kind": "circuit", **_metrics_dict(m), "input_bits": c.input_bits,
                  "outputs": c.n_outputs, "diagnostics": diags}
    report["status"] = "ok" if not diags else "violation"
    _emit(report, [(k, v) for k, v in report.items() if k not in ("command", "diagnostics")])
    return OK if not diags else VIOLATION


def cmd_substitute(a) -> int:
    comp, b = _load_compiled(a.bundle)
    alt = ser.load_circuit(a.circuit)
    try:
        new = substitute_circuit_block(comp, alt, check=a.check)
    except SubstitutionError as e:
        rep = {"command": "substitute", "status": "violation", "error": str(e), "witness": e.witness}
        _emit(rep, [("status", "violation"), ("witness", e.witness)])
        return VIOLATION
    report = {"command": "substitute", "status": "ok", "depth": new.net.depth, "alt_depth": alt.depth,
              "previous_depth": comp.net.depth, "checked": a.check}
    d = comp.net.input_dim
    if comp.grid.size(d) <= a.cap:
        pts = comp.grid.points(d)
        same = eval_net_exact_batch(new.net, pts) == eval_net_exact_batch(comp.net, pts)
        report["grid_outputs_unchanged"] = same
        if a.check and not same:
            report["status"] = "violation"
    if a.out:
        metrics = {"net": _metrics_dict(new.metrics), "source": _metrics_dict(new.source_metrics),
                   "circuit": _metrics_dict(circuit_metrics(alt)), "weight_bound": new.weight_bound}
        opts = dict(b["options"])
        opts.pop("schema", None)
        ser.write_bundle(a.out, net=new.net, source=b["source"], rationalized=b["rationalized"], circuit=alt,
                         options=opts, metrics=metrics, report=report)
    _emit(report, [(k, v) for k, v in report.items() if k != "command"])
    return OK if report["status"] == "ok" else VIOLATION


def cmd_gadget(a) -> int:
    fmt = FixedPointFormat(a.C)
    if a.kind == "addition":
        c = iterated_addition_gadget(a.m, fmt, a.mode)
    elif a.kind == "multiplication":
        c = multiplication_gadget(fmt, a.mode)
    else:
        c = relu_gadget(fmt, a.rails)
    ser.save_circuit(c, a.out)
    m = circuit_metrics(c)
    _emit({"command": "gadget", "status": "ok", "kind": a.kind, **_metrics_dict(m)},
          [("gadget", a.kind), ("depth", m.depth), ("width", m.width), ("max |weight|", m.max_abs_weight)])
    return OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boundnet", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("compile", help="compile a net to a bounded-weight net")
    p.add_argument("--net", required=True)
    p.add_argument("--R", type=_frac, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--B", type=_frac, required=True)
    p.add_argument("--p-prime", type=int, required=True)
    p.add_argument("--gadget", choices=["compact", "poly-weight"], default="compact")
    p.add_argument("--discrete", action="store_true", help="inputs are promised on the grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("verify", help="re-check a compile bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mode", choices=["grid", "mc"], default="grid")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=10**6)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("collapse", help="rewrite a univariate net at depth 2")
    p.add_argument("--net", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("circuit-eval", help="evaluate a circuit on one bit string")
    p.add_argument("--circuit", required=True)
    p.add_argument("--bits", required=True)
    p.set_defaults(func=cmd_circuit_eval)

    p = sub.add_parser("stats", help="depth/width/weight metrics")
    p.add_argument("--net")
    p.add_argument("--circuit")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("substitute", help="swap the circuit block of a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--circuit", required=True)
    p.add_argument("--check", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--cap", type=int, default=10**6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_substitute)

    p = sub.add_parser("gadget", help="write an arithmetic gadget circuit")
    p.add_argument("--kind", choices=["addition", "multiplication", "relu"], required=True)
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--rails", type=int, default=1)
    p.add_argument("--mode", choices=["compact", "poly-weight"], default="compact")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gadget)
    return ap


def run_cli(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return USAGE if e.code else OK
    try:
        return a.func(a)
    except (UsageError, ser.FormatError, NetError, GadgetError, CircuitError, ValueError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return USAGE


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
