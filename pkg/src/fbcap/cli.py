"""Command line entry point: ``fbcap capacity|synthesize|simulate|curve|validate``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass

import numpy as np

from fbcap.coding import REDUCE_TOL, CodingScheme, build_scheme
from fbcap.dual import solve_dual, upper_bound_continuous
from fbcap.errors import (
    CodebookTooLargeError,
    DegeneracyError,
    FbcapError,
    NonConvergenceError,
    PreconditionError,
    WhiteNoiseError,
    ZeroRateError,
)
from fbcap.noise import NoiseModel, PowerBudget, nonfeedback_capacity

log = logging.getLogger("fbcap")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VALIDATION = 0, 1, 2, 3
M_CAP = 512


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    """Channel description; coefficients in ascending powers of ``z^-1``."""

    name: str
    numerator: tuple
    denominator: tuple
    power: float

    def noise(self) -> NoiseModel:
        return NoiseModel.from_coeffs(self.numerator, self.denominator)

    def budget(self) -> PowerBudget:
        return PowerBudget(self.power)


def parse_spec(text: str, source: str = "<spec>") -> ChannelSpec:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"{source}: expected a JSON object")
    missing = [k for k in ("numerator", "power") if k not in d]
    if missing:
        raise UsageError(f"{source}: missing field(s) {', '.join(missing)}")
    try:
        spec = ChannelSpec(str(d.get("name", "channel")), tuple(float(c) for c in d["numerator"]),
                           tuple(float(c) for c in d.get("denominator", [1.0])), float(d["power"]))
        spec.noise()
        spec.budget()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{source}: invalid channel: {exc}") from exc
    return spec


def load_spec(path: str, power: float | None = None) -> ChannelSpec:
    try:
        with open(path) as fh:
            spec = parse_spec(fh.read(), path)
    except OSError as exc:
        raise UsageError(f"cannot read spec: {exc}") from exc
    if power is not None:
        spec = ChannelSpec(spec.name, spec.numerator, spec.denominator, power)
        try:
            spec.budget()
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return spec


def m_rule(h: int) -> int:
    """Default grid size ``min(16 h, 512)`` (at least 8)."""
    return max(8, min(16 * h, M_CAP))


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _int_list(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def _float_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def capacity_row(noise: NoiseModel, P: float, h: int, m: int) -> dict:
    """Upper bound, achievable rate and gap for one ``(h, m)``."""
    from fbcap.synthesis import synthesize

    sol = solve_dual(noise, P, h, m)
    upper = upper_bound_continuous(sol)
    lower = synthesize(sol).rate
    return {"h": h, "m": m, "upper": upper, "lower": lower, "gap": upper - lower,
            "iterations": sol.diagnostics["iterations"]}


def cmd_capacity(spec: ChannelSpec, h_list, m=None, rule=m_rule, out=None) -> list:
    """One row per ``h``; failed rows are kept and marked."""
    noise = spec.noise()
    if noise.is_white():
        raise WhiteNoiseError("white noise: feedback does not increase capacity; "
                              f"nonfeedback capacity is {nonfeedback_capacity(noise, spec.power):.6f} bits/use")
    rows = []
    for h in h_list:
        mm = m if m is not None else rule(h)
        try:
            r = capacity_row(noise, spec.power, h, mm)
            r["status"] = "ok"
        except (NonConvergenceError, DegeneracyError, ZeroRateError, FloatingPointError) as exc:
            log.warning("h=%d m=%d failed: %s", h, mm, exc)
            r = {"h": h, "m": mm, "upper": float("nan"), "lower": float("nan"),
                 "gap": float("nan"), "iterations": 0, "status": "failed"}
        rows.append(r)
    if out:
        write_csv(out, ["h", "m", "upper", "lower", "gap", "status"],
                  [[r["h"], r["m"], r["upper"], r["lower"], r["gap"], r["status"]] for r in rows])
    return rows


def cmd_synthesize(spec: ChannelSpec, h: int, m: int | None = None, reduce_tol: float = REDUCE_TOL,
                   order: int | None = None, out: str | None = None) -> dict:
    """Full pipeline to a coding scheme; the JSON holds everything ``simulate`` needs."""
    from fbcap.synthesis import synthesize

    m = m if m is not None else m_rule(h)
    sol = solve_dual(spec.noise(), spec.power, h, m)
    res = synthesize(sol)
    scheme = build_scheme(res, reduce_tol, order)
    doc = {
        "channel": {"name": spec.name, "numerator": list(spec.numerator),
                    "denominator": list(spec.denominator), "power": spec.power},
        "h": h, "m": m,
        "upper_bound": upper_bound_continuous(sol),
        "fir": {"raw": list(res.filter.q / res.alpha), "scaled": list(res.filter.q),
                "alpha": res.alpha, "raw_power": res.raw_power},
        "achievable_rate": res.rate,
        "scheme": scheme.to_dict(),
    }
    if out:
        with open(out, "w") as fh:
            json.dump(doc, fh, indent=1)
    return doc


def load_scheme(path: str) -> CodingScheme:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read scheme: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        return CodingScheme.from_dict(doc.get("scheme", doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: not a scheme file ({exc})") from exc


def cmd_simulate(scheme: CodingScheme, horizons, trials: int, rate_fraction: float, seed: int,
                 out: str | None = None) -> list:
    from fbcap.simulate import MIN_TRIALS, error_probability

    if trials < MIN_TRIALS:
        raise UsageError(f"--trials must be at least {MIN_TRIALS}")
    if not 0 < rate_fraction <= 1:
        raise UsageError("--rate-fraction must lie in (0, 1]")
    reports = [error_probability(scheme, rate_fraction, n, trials, seed) for n in horizons]
    if out:
        write_csv(out, ["n", "trials", "errors", "p_e", "ci_low", "ci_high", "empirical_power", "rate"],
                  [[r.horizon, r.trials, r.errors, r.p_e, r.ci_low, r.ci_high, r.empirical_power, r.rate]
                   for r in reports])
    return reports


def cmd_curve(spec: ChannelSpec, powers, h: int, m: int | None = None, out: str | None = None) -> list:
    if not powers:
        raise UsageError("empty power list")
    rows = []
    for P in powers:
        sp = ChannelSpec(spec.name, spec.numerator, spec.denominator, P)
        r = cmd_capacity(sp, [h], m)[0]
        rows.append({"P": P, "C": r["upper"], "lower": r["lower"], "upper": r["upper"],
                     "gap": r["gap"], "status": r["status"]})
    if out:
        write_csv(out, ["P", "C", "lower", "upper", "gap", "status"],
                  [[r["P"], r["C"], r["lower"], r["upper"], r["gap"], r["status"]] for r in rows])
    return rows


def cmd_validate(spec: ChannelSpec | None = None) -> list:
    """Consistency checks; returns ``(name, passed, detail)`` rows."""
    from fbcap.noise import ma1_closed_form
    from fbcap.primal import solve_primal
    from fbcap.synthesis import synthesize

    checks = []

    def add(name, ok, detail):
        checks.append((name, bool(ok), detail))

    ma1 = NoiseModel.arma1(0.4)
    ma2 = NoiseModel.from_coeffs([1.0, 0.1, 0.5])
    closed = ma1_closed_form(0.4, 0.0, 10.0)
    add("ma1 closed form", abs(closed - 1.8819) <= 1e-4, f"{closed:.6f} vs 1.8819")
    ub = upper_bound_continuous(solve_dual(ma1, 10.0, 20, 256))
    add("ma1 pipeline vs closed form", abs(ub - closed) <= 2e-3, f"{ub:.6f} vs {closed:.6f}")
    for name, n in (("ma1", ma1), ("ma2", ma2)):
        for h, m in ((4, 32), (8, 64)):
            _, pv = solve_primal(n, 10.0, h, m)
            dv = solve_dual(n, 10.0, h, m).upper_bound_discrete_bits
            add(f"{name} duality gap h={h} m={m}", abs(pv - dv) <= 1e-4, f"|{pv:.8f} - {dv:.8f}|")
    ok, err = sk_recursion_check(50)
    add("sk recursion equivalence", ok, f"max rel. deviation {err:.2e}")
    target = ma2 if spec is None else spec.noise()
    P = 10.0 if spec is None else spec.power
    h = 24 if spec is None else 20
    res = synthesize(solve_dual(target, P, h, m_rule(h)))
    scheme = build_scheme(res)
    diff = abs(scheme.rate_certificate - res.rate)
    add("rate equals unstable pole sum", diff <= 2e-3,
        f"{scheme.rate_certificate:.6f} vs {res.rate:.6f}")
    return checks


def sk_recursion_check(steps: int = 50, P: float = 1.0, seed: int = 0):
    """Run the literal encoder/decoder on the white-noise scheme next to the closed-form recursions."""
    from fbcap.coding import decoder_init, decoder_output, decoder_step, encoder_init, encoder_step, sk_instantiate

    sk = sk_instantiate(P, 1.0)
    a = float(sk.split.A_u[0, 0])
    g = np.sqrt(a * a - 1.0)
    w = np.random.default_rng(seed).standard_normal(steps)
    x0 = 0.3
    enc, dec = encoder_init(sk, [x0]), decoder_init(sk)
    est_ref = 0.0
    worst = 0.0
    for k in range(steps):
        u_ref = g * a**k * (est_ref + x0)
        u, enc = encoder_step(sk, enc, decoder_output(sk, dec))
        y = u + w[k]
        _, est, dec = decoder_step(sk, dec, y)
        est_ref = est_ref - a ** (-k - 2) * g * y
        # U is a difference of terms of size g a^k, so errors are measured on that scale
        worst = max(worst, abs(u - u_ref) / (g * a**k * (1.0 + abs(x0))),
                    abs(est[0] - est_ref) / max(1.0, abs(est_ref)))
    return worst <= 1e-12, worst


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fbcap", description="Feedback capacity of colored Gaussian noise channels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, spec_required=True):
        sp.add_argument("--spec", required=spec_required, help="channel spec JSON")
        sp.add_argument("--power", type=float, help="override the spec's power budget")
        sp.add_argument("--m", type=int, help="grid size (default max(8, min(16h, 512)))")
        sp.add_argument("--out", help="output path")

    c = sub.add_parser("capacity", help="upper/lower bounds for one or more h")
    common(c)
    c.add_argument("--h", default="20", help="h or comma-separated list of h")

    s = sub.add_parser("synthesize", help="build the filter, controller and scheme file")
    common(s)
    s.add_argument("--h", type=int, default=20, help="number of causality constraints")
    s.add_argument("--reduce-tol", type=float, default=REDUCE_TOL, help="relative Hankel truncation tolerance")
    s.add_argument("--order", type=int, help="fixed Hankel reduction order")

    r = sub.add_parser("simulate", help="Monte Carlo error probability of a scheme file")
    r.add_argument("--scheme", required=True, help="scheme JSON written by synthesize")
    r.add_argument("--trials", type=int, default=10000, help="trials per horizon (at least 100)")
    r.add_argument("--horizon", default="10,20,30,40,50,60", help="n or comma-separated list")
    r.add_argument("--rate-fraction", type=float, default=0.95, help="rate as a fraction of the certificate")
    r.add_argument("--seed", type=int, default=0, help="base RNG seed")
    r.add_argument("--out", help="p_e vs n CSV")

    v = sub.add_parser("curve", help="capacity versus power")
    common(v)
    v.add_argument("--h", type=int, default=20, help="number of causality constraints")
    v.add_argument("--powers", required=True, help="comma-separated power budgets")

    val = sub.add_parser("validate", help="run the built-in consistency checks")
    val.add_argument("--spec", help="optional channel for the rate identity check")
    return p


def _h_list(text):
    vals = _int_list(text)
    if any(h < 0 for h in vals):
        raise UsageError("h must be nonnegative")
    return vals


def _check_m(m, h_values):
    if m is not None and any(not 2 * m > h for h in h_values):
        raise UsageError("need 2m > h")


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.time()
    try:
        if args.command == "capacity":
            spec = load_spec(args.spec, args.power)
            hs = _h_list(args.h)
            _check_m(args.m, hs)
            rows = cmd_capacity(spec, hs, args.m, out=args.out)
            print(f"{'h':>4} {'m':>5} {'upper':>12} {'lower':>12} {'gap':>10}  status")
            for r in rows:
                print(f"{r['h']:>4} {r['m']:>5} {r['upper']:>12.8f} {r['lower']:>12.8f} {r['gap']:>10.2e}  {r['status']}")
            return EXIT_NUMERIC if any(r["status"] != "ok" for r in rows) else EXIT_OK
        if args.command == "synthesize":
            spec = load_spec(args.spec, args.power)
            _check_m(args.m, [args.h])
            doc = cmd_synthesize(spec, args.h, args.m, args.reduce_tol, args.order, args.out)
            sch = doc["scheme"]
            poles = ", ".join(f"{re:+.6f}{im:+.6f}j" for re, im in sch["unstable_poles"])
            print(f"upper bound       {doc['upper_bound']:.8f}")
            print(f"achievable rate   {doc['achievable_rate']:.8f}")
            print(f"rate certificate  {sch['rate_certificate']:.8f}")
            print(f"message dimension {sch['message_dim']}")
            print(f"unstable poles    {poles}")
            return EXIT_OK
        if args.command == "simulate":
            scheme = load_scheme(args.scheme)
            reports = cmd_simulate(scheme, _int_list(args.horizon), args.trials, args.rate_fraction,
                                   args.seed, args.out)
            print(json.dumps([r.to_dict() for r in reports], indent=1))
            return EXIT_OK
        if args.command == "curve":
            spec = load_spec(args.spec, args.power)
            powers = _float_list(args.powers)
            _check_m(args.m, [args.h])
            rows = cmd_curve(spec, powers, args.h, args.m, args.out)
            print(f"{'P':>10} {'C':>12} {'lower':>12}  status")
            for r in rows:
                print(f"{r['P']:>10g} {r['C']:>12.8f} {r['lower']:>12.8f}  {r['status']}")
            return EXIT_NUMERIC if any(r["status"] != "ok" for r in rows) else EXIT_OK
        if args.command == "validate":
            spec = load_spec(args.spec) if args.spec else None
            checks = cmd_validate(spec)
            width = max(len(c[0]) for c in checks)
            for name, ok, detail in checks:
                print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
            log.info("validate finished in %.1f s", time.time() - t0)
            return EXIT_OK if all(c[1] for c in checks) else EXIT_VALIDATION
    except UsageError as exc:
        print(f"fbcap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (WhiteNoiseError, PreconditionError, CodebookTooLargeError) as exc:
        print(f"fbcap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergenceError, DegeneracyError, ZeroRateError, FloatingPointError, FbcapError) as exc:
        print(f"fbcap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_USAGE


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
