"""Command-line front-end: props, selftest, simulate, and qkd subcommands.

Exit codes: 0 = checks passed (or an adversarial strategy behaved as
documented), 1 = check failure, 2 = usage or configuration error.  Every
report embeds the effective config, the seed, and the toolkit version.  A
JSON config file can stand in for flags; explicitly given flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .family import (
    SimParams,
    c_of,
    c_property_suite,
    hamiltonian_identity_residual,
    sim_povm,
    sim_state,
)
from .linalg import PAULIS, is_hermitian, is_psd, is_unitary, random_hermitian
from .selftest import (
    SelfTestPreconditionError,
    correlations,
    family_experiment,
    reference_experiment,
    run_selftest,
)
from .serialize import (
    correlation_table_to_csv,
    correlation_table_to_dict,
    dumps,
    equivalence_report_to_dict,
    experiment_from_json,
    matrix_from_json,
    qber_report_to_dict,
    strategy_from_json,
    transcript_to_csv,
    transcript_to_dict,
)
from .sixstate import (
    Conjugate,
    Honest,
    MismatchedFlags,
    ZPremeasure,
    analyze,
    expected_consistent,
    run_rounds,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_kv(tokens, allowed, what):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"{what}: expected key=value, got {tok!r}")
        key, _, val = tok.partition("=")
        if key not in allowed:
            raise UsageError(f"{what}: unknown key {key!r} (allowed: {sorted(allowed)})")
        out[key] = val
    return out


def _family_params(tokens) -> SimParams:
    kv = _parse_kv(tokens, {"a", "c", "c_abs", "c_phase"}, "--family")
    if "a" not in kv:
        raise UsageError("--family requires a=<float>")
    c_abs = float(kv.get("c_abs", kv.get("c", 0.0)))
    return SimParams.from_polar(float(kv["a"]), c_abs, float(kv.get("c_phase", 0.0)))


def _strategy(tokens):
    if not tokens:
        raise UsageError("--strategy requires a strategy name")
    name, rest = tokens[0], tokens[1:]
    if name == "honest":
        return Honest(_family_params(rest))
    if name == "conjugate":
        return Conjugate()
    if name == "zpremeasure":
        return ZPremeasure(_family_params(rest))
    if name == "mismatched":
        if len(rest) != 2:
            raise UsageError("--strategy mismatched needs two flag bits")
        return MismatchedFlags(int(rest[0]), int(rest[1]))
    if name == "custom":
        if len(rest) != 1:
            raise UsageError("--strategy custom needs a JSON state/strategy path")
        data = json.loads(Path(rest[0]).read_text())
        if "strategy" not in data:
            data = {"strategy": "custom_state", "state": data}
        return strategy_from_json(data)
    raise UsageError(f"unknown strategy {name!r}")


def _wrap(results: dict, config: dict, seed) -> str:
    return dumps({"version": __version__, "seed": seed, "config": config,
                  "results": results})


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_props(args) -> int:
    trials = args.trials if args.trials is not None else 100
    dim = args.dim if args.dim is not None else 4
    if dim > 8:
        raise UsageError(f"--dim {dim} exceeds the supported bound 8")
    seed = 0 if args.seed is None else args.seed
    tol = args.tol if args.tol is not None else 1e-10
    report = c_property_suite(trials, dim, seed, tol=tol)
    items = [{"name": c.name, "max_residual": c.max_residual, "passed": c.passed}
             for c in report.checks]

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    ham_worst = 0.0
    for _ in range(trials // 10 + 1):
        dim = int(rng.integers(2, 5))
        ham_worst = max(ham_worst, hamiltonian_identity_residual(
            random_hermitian(dim, rng), (0.1, 1.0, np.pi)))
    items.append({"name": "hamiltonian_identity", "max_residual": ham_worst,
                  "passed": ham_worst <= 1e-8})

    stats_worst = _statistics_preservation_residual()
    items.append({"name": "statistics_preservation", "max_residual": stats_worst,
                  "passed": stats_worst <= tol})

    for fixture in args.config_data.get("fixtures", []):
        m = matrix_from_json(fixture["matrix"])
        for claim in fixture.get("claims", []):
            check = {"hermitian": is_hermitian, "unitary": is_unitary, "psd": is_psd}.get(claim)
            if check is None:
                raise UsageError(f"fixture claim {claim!r} not recognized")
            ok = bool(check(c_of(m)) and check(m))
            items.append({"name": f"fixture[{fixture.get('label', '?')}:{claim}]",
                          "max_residual": 0.0 if ok else 1.0, "passed": ok})

    passed = all(i["passed"] for i in items)
    _emit(_wrap({"items": items, "passed": passed}, vars_config(args), seed), args.out)
    return EXIT_PASS if passed else EXIT_FAIL


def _statistics_preservation_residual() -> float:
    """Outcome probabilities of lifted POVMs on family members vs the reference."""
    from .states import StateVector

    plus = StateVector([2], np.array([1, 1]) / np.sqrt(2))
    imag = StateVector([2], np.array([1, 1j]) / np.sqrt(2))
    eye = np.eye(2)
    corpus = [
        (plus, [(eye + PAULIS["X"]) / 2, (eye - PAULIS["X"]) / 2]),
        (imag, [(eye + PAULIS["Y"]) / 2, (eye - PAULIS["Y"]) / 2]),
        (imag, [(eye + PAULIS["Z"]) / 2, (eye - PAULIS["Z"]) / 2]),
    ]
    from .family import Povm

    worst = 0.0
    for a in (0.0, 0.25, 0.5, 1.0):
        cmax = np.sqrt(a * (1 - a))
        for c in {0.0, cmax, cmax * 1j}:
            p = SimParams(a, c)
            for psi, elements in corpus:
                povm = Povm(elements)
                ref = povm.probabilities(psi)
                sim = sim_povm(povm).probabilities(sim_state(psi, p))
                worst = max(worst, float(np.abs(ref - sim).max()))
    return worst


def _build_experiment(args):
    if args.experiment and args.family:
        raise UsageError("give either --experiment or --family, not both")
    if args.experiment:
        return experiment_from_json(json.loads(Path(args.experiment).read_text()))
    if args.family:
        return family_experiment(_family_params(args.family), args.kind)
    return reference_experiment(args.kind)


def cmd_selftest(args) -> int:
    exp = _build_experiment(args)
    tol = args.tol if args.tol is not None else 1e-9
    stats_tol = args.stats_tol if args.stats_tol is not None else 1e-10
    sampled_n, seed = None, args.seed
    if args.sampled:
        kv = _parse_kv(args.sampled, {"n", "seed"}, "--sampled")
        if "n" not in kv:
            raise UsageError("--sampled requires n=<count>")
        sampled_n = int(kv["n"])
        if "seed" in kv:
            seed = int(kv["seed"])
        if seed is None:
            raise UsageError("sampled mode requires a seed (no wall-clock seeding)")
    report = run_selftest(exp, tol=tol, stats_tol=stats_tol,
                          sampled_n=sampled_n, seed=seed)
    _emit(_wrap(equivalence_report_to_dict(report), vars_config(args), seed), args.out)
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_simulate(args) -> int:
    exp = _build_experiment(args)
    table = correlations(exp, include_cross_pairs=args.cross_pairs)
    if args.format == "csv":
        _emit(correlation_table_to_csv(table), args.out)
    else:
        _emit(_wrap(correlation_table_to_dict(table), vars_config(args), args.seed), args.out)
    return EXIT_PASS


def cmd_qkd(args) -> int:
    strategy = _strategy(args.strategy)
    if args.seed is None:
        raise UsageError("qkd requires a seed (no wall-clock seeding)")
    threshold = args.threshold if args.threshold is not None else 0.0
    n = args.n if args.n is not None else 30000
    transcript = run_rounds(strategy, n, args.seed)
    report = analyze(transcript, abort_threshold=threshold)
    if args.transcript_out:
        if args.transcript_out.endswith(".json"):
            Path(args.transcript_out).write_text(dumps(transcript_to_dict(transcript)))
        else:
            Path(args.transcript_out).write_text(transcript_to_csv(transcript))
    _emit(_wrap(qber_report_to_dict(report), vars_config(args), args.seed), args.out)
    expected = expected_consistent(strategy)
    if expected is None:
        return EXIT_PASS if report.consistent else EXIT_FAIL
    return EXIT_PASS if report.consistent == expected else EXIT_FAIL


def vars_config(args) -> dict:
    skip = {"func", "config_data"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conjsim",
        description="Conjugation-simulation toolkit: property suites, EPR self-tests, 6-state QKD")
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="write the report to this path (default: stdout)")
    common.add_argument("--format", choices=["json", "csv"], default=None)
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None,
                        help="accepted for interface stability; must not affect outputs")

    p = sub.add_parser("props", parents=[common],
                       help="run the lifting property suite and simulation invariants")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.set_defaults(func=cmd_props)

    p = sub.add_parser("selftest", parents=[common], help="run the self-test pipeline")
    p.add_argument("--kind", choices=["mayersyao", "extended"], default="extended")
    p.add_argument("--experiment", help="experiment JSON path")
    p.add_argument("--family", nargs="+", metavar="K=V",
                   help="family member, e.g. a=0.5 c=0.5 c_phase=0")
    p.add_argument("--sampled", nargs="+", metavar="K=V",
                   help="sampled statistics, e.g. n=100000 seed=7")
    p.add_argument("--stats-tol", type=float, default=None, dest="stats_tol")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("simulate", parents=[common],
                       help="dump the exact correlation table of an experiment")
    p.add_argument("--kind", choices=["mayersyao", "extended"], default="extended")
    p.add_argument("--experiment")
    p.add_argument("--family", nargs="+", metavar="K=V")
    p.add_argument("--cross-pairs", action="store_true", dest="cross_pairs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qkd", parents=[common], help="simulate 6-state protocol rounds")
    p.add_argument("--strategy", nargs="+", required=True,
                   help="honest a=.. c=.. | conjugate | zpremeasure a=.. c=.. | "
                        "mismatched FA FB | custom path.json")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--transcript-out", dest="transcript_out")
    p.set_defaults(func=cmd_qkd)
    return parser


def _apply_config(args, argv):
    args.config_data = {}
    if not args.config:
        return args
    data = json.loads(Path(args.config).read_text())
    args.config_data = data
    given = set()
    for tok in argv:
        if tok.startswith("--"):
            given.add(tok.lstrip("-").split("=")[0].replace("-", "_"))
    for key, value in data.items():
        if key in ("fixtures", "command"):
            continue
        if hasattr(args, key) and key not in given and getattr(args, key) in (None, False):
            setattr(args, key, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    raw_argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(raw_argv)
        args = _apply_config(args, raw_argv)
        if args.workers is not None and args.workers < 1:
            raise UsageError("--workers must be at least 1")
        if getattr(args, "n", None) is not None and args.n < 1:
            raise UsageError("--n must be at least 1")
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SelfTestPreconditionError as err:
        print(f"refused: stage {err.stage}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
