"""Monte-Carlo simulator for the entanglement-based 6-state protocol on family sources.

Both parties hold one data qubit of an EPR pair plus their local simulation
flag qubit.  Each round they pick a uniformly random basis among X, Y, Z and
measure the flag-conditioned observable; Bob's honest Y observable is -Y (the
extended-test convention), which makes every same-basis pair perfectly
correlated for every feasible family member, so the honest QBER is exactly 0.

Round draws follow a fixed, documented order per round: basis_a, basis_b,
then (only when the flag outcome is not deterministic) the flag collapse, then
one uniform for the joint outcome.  Transcripts are therefore a pure function
of (strategy, n, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .family import SimParams, c_of, multiparty_sim_state
from .linalg import PAULIS, embed_operator, permute_subsystems_vector
from .states import DensityMatrix, StateVector, epr_pair

BASES = ("X", "Y", "Z")
SOURCE_DIMS = (2, 2, 2, 2)            # flag_A, data_A, flag_B, data_B
FLAG_A, DATA_A, FLAG_B, DATA_B = range(4)


@dataclass(frozen=True)
class Honest:
    """Eve prepares the agreed family member and otherwise stays out."""

    params: SimParams

    def describe(self) -> dict:
        return {"strategy": "honest", "a": self.params.a,
                "c_abs": abs(self.params.c), "c_phase": float(np.angle(self.params.c))}


@dataclass(frozen=True)
class Conjugate:
    """The fully conjugated member (a = 0, c = 0)."""

    def describe(self) -> dict:
        return {"strategy": "conjugate"}


@dataclass(frozen=True)
class ZPremeasure:
    """Eve measures both flag registers in Z before the protocol starts."""

    params: SimParams

    def describe(self) -> dict:
        return {"strategy": "zpremeasure", "a": self.params.a,
                "c_abs": abs(self.params.c), "c_phase": float(np.angle(self.params.c))}


@dataclass(frozen=True)
class MismatchedFlags:
    """Flags pinned to possibly different Z eigenvectors on the two sides."""

    flag_a: int
    flag_b: int

    def __post_init__(self):
        if self.flag_a not in (0, 1) or self.flag_b not in (0, 1):
            raise ValueError("flags must be bits")

    def describe(self) -> dict:
        return {"strategy": "mismatched_flags", "flag_a": self.flag_a, "flag_b": self.flag_b}


@dataclass(frozen=True)
class CustomState:
    """Arbitrary two-flag-two-data source, e.g. a non-family negative control."""

    state: DensityMatrix

    def __post_init__(self):
        if tuple(self.state.dims) != SOURCE_DIMS:
            raise ValueError(f"custom state must have dims {SOURCE_DIMS}")

    def describe(self) -> dict:
        return {"strategy": "custom_state"}


EveStrategy = Honest | Conjugate | ZPremeasure | MismatchedFlags | CustomState


def source_state(strategy: EveStrategy) -> DensityMatrix:
    if isinstance(strategy, (Honest, ZPremeasure)):
        return multiparty_sim_state(epr_pair(), 2, strategy.params)
    if isinstance(strategy, Conjugate):
        return multiparty_sim_state(epr_pair(), 2, SimParams(0.0, 0.0))
    if isinstance(strategy, MismatchedFlags):
        flags = np.zeros(4, dtype=complex)
        flags[2 * strategy.flag_a + strategy.flag_b] = 1.0
        vec = np.kron(flags, epr_pair().amplitudes)      # [fA, fB, dA, dB]
        vec = permute_subsystems_vector(vec, [2, 2, 2, 2], [0, 2, 1, 3])
        return StateVector(SOURCE_DIMS, vec).density()
    if isinstance(strategy, CustomState):
        return strategy.state
    raise TypeError(f"unknown strategy {strategy!r}")


def expected_consistent(strategy: EveStrategy) -> bool | None:
    """Documented expectation for the abort verdict; None when there is none."""
    if isinstance(strategy, MismatchedFlags):
        return strategy.flag_a == strategy.flag_b
    if isinstance(strategy, CustomState):
        return None
    return True


def lifted_observable(party: str, basis: str) -> np.ndarray:
    """Flag-conditioned Pauli on (flag, data); Bob's Y carries the -1 phase."""
    m = PAULIS[basis]
    if party == "B" and basis == "Y":
        m = -m
    return c_of(m)


def _measurement_ops():
    ops = {}
    for party, block in (("A", [FLAG_A, DATA_A]), ("B", [FLAG_B, DATA_B])):
        for basis in BASES:
            ops[(party, basis)] = embed_operator(lifted_observable(party, basis),
                                                 SOURCE_DIMS, block)
    return ops


def _outcome_cumulants(rho: np.ndarray) -> dict[tuple[str, str], np.ndarray]:
    """Cumulative joint-outcome distributions for all nine basis pairs.

    Outcome index k encodes (bit_a, bit_b) = (k >> 1, k & 1) with the
    +1 -> 0, -1 -> 1 convention.
    """
    ops = _measurement_ops()
    eye = np.eye(rho.shape[0])
    out = {}
    for ba in BASES:
        for bb in BASES:
            ma, mb = ops[("A", ba)], ops[("B", bb)]
            probs = []
            for sa in (1, -1):
                for sb in (1, -1):
                    proj = ((eye + sa * ma) / 2) @ ((eye + sb * mb) / 2)
                    probs.append(float(np.trace(rho @ proj).real))
            probs = np.clip(np.array(probs), 0.0, None)
            if abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError("joint outcome probabilities do not normalize")
            cum = np.cumsum(probs / probs.sum())
            cum[-1] = 1.0
            out[(ba, bb)] = cum
    return out


def _flag_branches(rho: DensityMatrix, tol: float = 1e-9):
    """Z-collapse of both flags: [(probability, (z_a, z_b), post_state)].

    Family states only populate the logical flag states, so only the (0, 0)
    and (1, 1) branches can appear; a cross branch beyond tolerance is an error.
    """
    branches = []
    for za in (0, 1):
        for zb in (0, 1):
            pa = np.diag([1.0 - za, float(za)]).astype(complex)
            pb = np.diag([1.0 - zb, float(zb)]).astype(complex)
            proj = (embed_operator(pa, SOURCE_DIMS, [FLAG_A])
                    @ embed_operator(pb, SOURCE_DIMS, [FLAG_B]))
            p = float(np.trace(rho.matrix @ proj).real)
            if za != zb:
                if p > tol:
                    raise ValueError(f"family source has cross-flag population {p}")
                continue
            if p <= tol:
                continue
            post = proj @ rho.matrix @ proj / p
            branches.append((p, (za, zb), DensityMatrix(SOURCE_DIMS, post)))
    return branches


@dataclass(frozen=True)
class RoundRecord:
    index: int
    basis_a: str
    basis_b: str
    outcome_a: int
    outcome_b: int
    flag_a: int | None = None      # diagnostic only; set when Eve premeasures
    flag_b: int | None = None


@dataclass(frozen=True)
class Transcript:
    rounds: tuple[RoundRecord, ...] = field(repr=False)
    seed: int
    strategy: dict

    @property
    def n(self) -> int:
        return len(self.rounds)


def run_rounds(strategy: EveStrategy, n: int, seed: int) -> Transcript:
    """Simulate n protocol rounds; deterministic for a given (strategy, n, seed)."""
    if n < 1:
        raise ValueError("need at least one round")
    rho = source_state(strategy)
    if isinstance(strategy, ZPremeasure):
        branches = _flag_branches(rho)
        tables = [(_outcome_cumulants(b.matrix), flags) for _, flags, b in branches]
        probs = np.array([p for p, _, _ in branches])
        deterministic = len(branches) == 1
    else:
        tables = [(_outcome_cumulants(rho.matrix), None)]
        probs = np.array([1.0])
        deterministic = True

    rng = np.random.default_rng(int(seed))
    cum_branch = np.cumsum(probs / probs.sum())
    cum_branch[-1] = 1.0
    rounds = []
    for i in range(n):
        ba = BASES[rng.integers(3)]
        bb = BASES[rng.integers(3)]
        if deterministic:
            branch = 0
        else:
            branch = int(np.searchsorted(cum_branch, rng.random(), side="right"))
        table, flags = tables[branch]
        k = int(np.searchsorted(table[(ba, bb)], rng.random(), side="right"))
        rec = RoundRecord(index=i, basis_a=ba, basis_b=bb,
                          outcome_a=k >> 1, outcome_b=k & 1,
                          flag_a=None if flags is None else flags[0],
                          flag_b=None if flags is None else flags[1])
        rounds.append(rec)
    return Transcript(rounds=tuple(rounds), seed=int(seed), strategy=strategy.describe())


@dataclass(frozen=True)
class QberReport:
    """Per-basis sifted counts and error rates plus the abort verdict."""

    sifted: dict[str, int]
    errors: dict[str, int]
    rates: dict[str, float]
    total_rounds: int
    sift_fraction: float
    abort_threshold: float
    verdict: str
    flag_mismatches: int | None = None

    @property
    def consistent(self) -> bool:
        return self.verdict == "protocol-consistent"

    @property
    def flag_agreements(self) -> int | None:
        if self.flag_mismatches is None:
            return None
        return self.total_rounds - self.flag_mismatches


def sift(t: Transcript, abort_threshold: float = 0.0) -> QberReport:
    """Keep same-basis rounds and compute per-basis error rates."""
    sifted = {b: 0 for b in BASES}
    errors = {b: 0 for b in BASES}
    mismatches = 0
    saw_flags = False
    for rec in t.rounds:
        if rec.flag_a is not None:
            saw_flags = True
            if rec.flag_a != rec.flag_b:
                mismatches += 1
        if rec.basis_a != rec.basis_b:
            continue
        sifted[rec.basis_a] += 1
        if rec.outcome_a != rec.outcome_b:
            errors[rec.basis_a] += 1
    rates = {b: (errors[b] / sifted[b]) if sifted[b] else 0.0 for b in BASES}
    total = len(t.rounds)
    kept = sum(sifted.values())
    if total == 0:
        verdict = "insufficient data"
    elif all(rates[b] <= abort_threshold for b in BASES):
        verdict = "protocol-consistent"
    else:
        verdict = "not-protocol-consistent"
    return QberReport(sifted=sifted, errors=errors, rates=rates,
                      total_rounds=total, sift_fraction=kept / total if total else 0.0,
                      abort_threshold=abort_threshold, verdict=verdict,
                      flag_mismatches=mismatches if saw_flags else None)


def analyze(t: Transcript, abort_threshold: float = 0.0) -> QberReport:
    """Sift plus the protocol-consistency verdict (alias kept for the CLI surface)."""
    return sift(t, abort_threshold=abort_threshold)


def eve_flip_correction(report: QberReport, known_flags: tuple[int, int]) -> QberReport:
    """Undo Eve's Y-outcome flips in her reckoning of the error counts.

    A conjugated party's Y outcome is flipped; when exactly one side is
    flagged every sifted Y round toggles between error and agreement, and when
    both or neither are flagged nothing changes.
    """
    fa, fb = known_flags
    if fa == fb:
        return report
    errors = dict(report.errors)
    errors["Y"] = report.sifted["Y"] - report.errors["Y"]
    rates = {b: (errors[b] / report.sifted[b]) if report.sifted[b] else 0.0 for b in BASES}
    if report.total_rounds == 0:
        verdict = "insufficient data"
    elif all(rates[b] <= report.abort_threshold for b in BASES):
        verdict = "protocol-consistent"
    else:
        verdict = "not-protocol-consistent"
    return replace(report, errors=errors, rates=rates, verdict=verdict)


@dataclass(frozen=True)
class PremeasureComparison:
    zpremeasure: QberReport
    honest: QberReport
    rate_differences: dict[str, float]
    sigma_bounds: dict[str, float]
    within_tolerance: bool
    flag_mismatches: int


def zpremeasure_analysis(p: SimParams, n: int, seed: int,
                         nsigma: float = 5.0) -> PremeasureComparison:
    """Run ZPremeasure and Honest side by side on derived seeds and compare.

    Because the family source only populates the logical flag states, the
    premeasured flags always agree and the two error-rate profiles must
    coincide within binomial tolerance.
    """
    seed_z = np.random.SeedSequence([int(seed), 0]).generate_state(1)[0]
    seed_h = np.random.SeedSequence([int(seed), 1]).generate_state(1)[0]
    rz = sift(run_rounds(ZPremeasure(p), n, int(seed_z)))
    rh = sift(run_rounds(Honest(p), n, int(seed_h)))
    diffs, bounds = {}, {}
    ok = True
    for b in BASES:
        diffs[b] = abs(rz.rates[b] - rh.rates[b])
        var = 0.0
        for rep in (rz, rh):
            if rep.sifted[b]:
                r = rep.rates[b]
                var += r * (1 - r) / rep.sifted[b]
        bounds[b] = nsigma * np.sqrt(var)
        if diffs[b] > bounds[b]:
            ok = False
    return PremeasureComparison(zpremeasure=rz, honest=rh, rate_differences=diffs,
                                sigma_bounds=bounds, within_tolerance=ok,
                                flag_mismatches=rz.flag_mismatches or 0)
