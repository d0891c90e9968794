"""JSON and CSV encodings for states, experiments, strategies, and reports.

All complex numbers serialize as [re, im] pairs of decimal doubles; matrices
are row-major nested lists of pairs.  ``dumps`` output is deterministic
(sorted keys, fixed indentation) so reports are byte-identical across runs
with identical inputs.
"""

from __future__ import annotations

import io
import json

import numpy as np

from .family import SimParams
from .selftest import (
    CorrelationTable,
    EquivalenceReport,
    Experiment,
    FamilyParams,
    YCoefficientReport,
)
from .sixstate import (
    Conjugate,
    CustomState,
    EveStrategy,
    Honest,
    MismatchedFlags,
    QberReport,
    Transcript,
    ZPremeasure,
)
from .states import DensityMatrix, StateVector


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def complex_pair(z: complex) -> list[float]:
    z = complex(z)
    return [float(z.real), float(z.imag)]


def vector_to_json(vec: np.ndarray) -> list:
    return [complex_pair(z) for z in np.asarray(vec, dtype=complex).reshape(-1)]


def vector_from_json(data) -> np.ndarray:
    return np.array([complex(re, im) for re, im in data], dtype=complex)


def matrix_to_json(mat: np.ndarray) -> list:
    return [[complex_pair(z) for z in row] for row in np.asarray(mat, dtype=complex)]


def matrix_from_json(data) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in data], dtype=complex)


def state_to_json(state: StateVector | DensityMatrix) -> dict:
    if isinstance(state, StateVector):
        return {"dims": list(state.dims), "amplitudes": vector_to_json(state.amplitudes)}
    return {"dims": list(state.dims), "matrix": matrix_to_json(state.matrix)}


def state_from_json(data) -> StateVector | DensityMatrix:
    if "amplitudes" in data:
        return StateVector(data["dims"], vector_from_json(data["amplitudes"]))
    if "matrix" in data:
        return DensityMatrix(data["dims"], matrix_from_json(data["matrix"]))
    raise ValueError("state JSON needs an 'amplitudes' or 'matrix' field")


def sim_params_to_json(p: SimParams) -> dict:
    return {"a": float(p.a), "c_abs": float(abs(p.c)), "c_phase": float(np.angle(p.c))}


def sim_params_from_json(data) -> SimParams:
    return SimParams.from_polar(float(data["a"]), float(data.get("c_abs", 0.0)),
                                float(data.get("c_phase", 0.0)))


def experiment_to_json(exp: Experiment) -> dict:
    return {
        "kind": exp.kind,
        "state": state_to_json(exp.state),
        "parties": {
            p: {
                "dims": list(exp.party_dims[p]),
                "observables": {lab: matrix_to_json(m)
                                for lab, m in exp.observables[p].items()},
            }
            for p in ("A", "B")
        },
        "flag_registers": dict(exp.flag_registers) if exp.flag_registers else None,
    }


def experiment_from_json(data) -> Experiment:
    flags = data.get("flag_registers")
    return Experiment(
        kind=data["kind"],
        state=state_from_json(data["state"]),
        observables={p: {lab: matrix_from_json(m)
                         for lab, m in data["parties"][p]["observables"].items()}
                     for p in ("A", "B")},
        party_dims={p: tuple(data["parties"][p]["dims"]) for p in ("A", "B")},
        flag_registers={k: int(v) for k, v in flags.items()} if flags else None,
    )


def strategy_to_json(strategy: EveStrategy) -> dict:
    data = strategy.describe()
    if isinstance(strategy, CustomState):
        data["state"] = state_to_json(strategy.state)
    return data


def strategy_from_json(data) -> EveStrategy:
    name = data["strategy"]
    if name == "honest":
        return Honest(sim_params_from_json(data))
    if name == "conjugate":
        return Conjugate()
    if name == "zpremeasure":
        return ZPremeasure(sim_params_from_json(data))
    if name == "mismatched_flags":
        return MismatchedFlags(int(data["flag_a"]), int(data["flag_b"]))
    if name == "custom_state":
        state = state_from_json(data["state"])
        return CustomState(state.density())
    raise ValueError(f"unknown strategy {name!r}")


def correlation_table_to_dict(table: CorrelationTable) -> dict:
    out = {
        "kind": table.kind,
        "joints": {f"{a},{b}": v for (a, b), v in sorted(table.joints.items())},
        "marginals": {f"{p},{l}": v for (p, l), v in sorted(table.marginals.items())},
    }
    if table.sampled:
        out["joint_stderr"] = {f"{a},{b}": v for (a, b), v in sorted(table.joint_stderr.items())}
        out["marginal_stderr"] = {f"{p},{l}": v
                                  for (p, l), v in sorted(table.marginal_stderr.items())}
        out["n_per_pair"] = table.n_per_pair
        out["seed"] = table.seed
    return out


def correlation_table_to_csv(table: CorrelationTable) -> str:
    """Columns: setting_a, setting_b, value, stderr.  Marginal rows use 'I' for the idle side."""
    buf = io.StringIO()
    buf.write("setting_a,setting_b,value,stderr\n")
    j_err = table.joint_stderr or {}
    m_err = table.marginal_stderr or {}
    for (a, b), v in sorted(table.joints.items()):
        buf.write(f"{a},{b},{v!r},{j_err.get((a, b), 0.0)!r}\n")
    for (p, l), v in sorted(table.marginals.items()):
        pair = (l, "I") if p == "A" else ("I", l)
        buf.write(f"{pair[0]},{pair[1]},{v!r},{m_err.get((p, l), 0.0)!r}\n")
    return buf.getvalue()


def transcript_to_csv(t: Transcript) -> str:
    buf = io.StringIO()
    buf.write("round,basis_a,basis_b,outcome_a,outcome_b\n")
    for rec in t.rounds:
        buf.write(f"{rec.index},{rec.basis_a},{rec.basis_b},{rec.outcome_a},{rec.outcome_b}\n")
    return buf.getvalue()


def transcript_to_dict(t: Transcript) -> dict:
    return {
        "seed": t.seed,
        "strategy": t.strategy,
        "rounds": [
            {"round": r.index, "basis_a": r.basis_a, "basis_b": r.basis_b,
             "outcome_a": r.outcome_a, "outcome_b": r.outcome_b,
             **({"flag_a": r.flag_a, "flag_b": r.flag_b} if r.flag_a is not None else {})}
            for r in t.rounds
        ],
    }


def qber_report_to_dict(report: QberReport) -> dict:
    out = {
        "sifted": dict(report.sifted),
        "errors": dict(report.errors),
        "rates": dict(report.rates),
        "total_rounds": report.total_rounds,
        "sift_fraction": report.sift_fraction,
        "abort_threshold": report.abort_threshold,
        "verdict": report.verdict,
    }
    if report.flag_mismatches is not None:
        out["flag_mismatches"] = report.flag_mismatches
        out["flag_agreements"] = report.flag_agreements
    return out


def family_params_to_dict(params: FamilyParams) -> dict:
    return {
        "population_0": params.population_0,
        "population_1": params.population_1,
        "coherence": params.coherence,
        "source": params.source,
    }


def y_check_to_dict(y: YCoefficientReport) -> dict:
    return {
        "block_norms": {p: dict(v) for p, v in y.block_norms.items()},
        "normal_form_deviation": dict(y.normal_form_deviation),
        "support_factorization": dict(y.support_factorization),
        "sign_expectation": dict(y.sign_expectation),
        "populations": list(y.populations),
        "population_mismatch": y.population_mismatch,
    }


def equivalence_report_to_dict(report: EquivalenceReport) -> dict:
    out = {
        "kind": report.kind,
        "tol": report.tol,
        "stats_tol": report.stats_tol,
        "verdict": "pass" if report.passed else "fail",
        "failures": list(report.failures),
        "refused_stage": report.refused_stage,
    }
    if report.statistics is not None:
        out["statistics"] = {
            "passed": report.statistics.passed,
            "worst_entry": report.statistics.worst_entry,
            "worst_deviation": report.statistics.worst_deviation,
            "deviations": dict(sorted(report.statistics.deviations.items())),
        }
    if report.state_equalities is not None:
        out["state_equalities"] = dict(sorted(report.state_equalities.items()))
    if report.collapse_residuals is not None:
        out["collapse_residuals"] = dict(sorted(report.collapse_residuals.items()))
    if report.anticommutators is not None:
        out["anticommutators"] = {k: {"raw": v[0], "support": v[1]}
                                  for k, v in sorted(report.anticommutators.items())}
    if report.state_fidelity is not None:
        out["state_fidelity"] = report.state_fidelity
    if report.action_fidelities is not None:
        out["action_fidelities"] = {f"{lab}_{p}": v
                                    for (p, lab), v in sorted(report.action_fidelities.items())}
    if report.y_check is not None:
        out["y_check"] = y_check_to_dict(report.y_check)
    if report.family_params is not None:
        out["flag_populations"] = family_params_to_dict(report.family_params)
    return out
