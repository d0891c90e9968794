import numpy as np
import pytest

from conjsim.family import SimParams, c_of
from conjsim.linalg import Y
from conjsim.sixstate import (
    BASES,
    Conjugate,
    CustomState,
    Honest,
    MismatchedFlags,
    Transcript,
    ZPremeasure,
    analyze,
    eve_flip_correction,
    expected_consistent,
    lifted_observable,
    run_rounds,
    sift,
    source_state,
    zpremeasure_analysis,
)
from conjsim.states import DensityMatrix


def family_grid():
    grid = []
    for a in (0.0, 0.25, 0.5, 1.0):
        cmax = np.sqrt(a * (1 - a))
        for c in {0.0, cmax, cmax * 1j}:
            grid.append(SimParams(a, c))
    return grid


def test_lifted_observables():
    np.testing.assert_allclose(lifted_observable("A", "Y"), c_of(Y), atol=1e-14)
    np.testing.assert_allclose(lifted_observable("B", "Y"), c_of(-Y), atol=1e-14)


def test_source_state_mismatched_flags():
    rho = source_state(MismatchedFlags(0, 1))
    # flags (0,1): population sits in the fA=0, fB=1 sector
    diag = np.real(np.diag(rho.matrix)).reshape(2, 2, 2, 2)
    assert diag[0, :, 1, :].sum() == pytest.approx(1.0)


def test_run_rounds_honest_reference_no_errors():
    t = run_rounds(Honest(SimParams(1.0, 0.0)), 1000, seed=1)
    report = sift(t)
    assert sum(report.errors.values()) == 0
    assert report.verdict == "protocol-consistent"


def test_run_rounds_mismatched_flags_y_flips():
    t = run_rounds(MismatchedFlags(0, 1), 1000, seed=2)
    report = sift(t)
    assert report.rates["Y"] == 1.0
    assert report.rates["X"] == 0.0
    assert report.rates["Z"] == 0.0
    assert report.verdict == "not-protocol-consistent"


def test_run_rounds_deterministic():
    a = run_rounds(Honest(SimParams(0.5, 0.5)), 300, seed=9)
    b = run_rounds(Honest(SimParams(0.5, 0.5)), 300, seed=9)
    assert a.rounds == b.rounds
    c = run_rounds(Honest(SimParams(0.5, 0.5)), 300, seed=10)
    assert a.rounds != c.rounds


def test_run_rounds_rejects_bad_args():
    with pytest.raises(ValueError):
        run_rounds(Honest(SimParams(1.0, 0.0)), 0, seed=1)
    with pytest.raises(ValueError):
        MismatchedFlags(2, 0)


def test_honest_grid_all_bases_error_free():
    for p in family_grid():
        t = run_rounds(Honest(p), 2000, seed=5)
        report = sift(t)
        assert sum(report.errors.values()) == 0, p


def test_honest_exact_distributions_match_reference():
    # analytic check, no sampling: every basis pair's joint outcome
    # distribution equals the (a=1, c=0) reference distribution
    from conjsim.sixstate import _outcome_cumulants

    ref = _outcome_cumulants(source_state(Honest(SimParams(1.0, 0.0))).matrix)
    for p in family_grid():
        got = _outcome_cumulants(source_state(Honest(p)).matrix)
        for key in ref:
            np.testing.assert_allclose(got[key], ref[key], atol=1e-10)


def test_sift_all_equal_transcript():
    t = run_rounds(Honest(SimParams(1.0, 0.0)), 500, seed=3)
    report = sift(t)
    kept = sum(report.sifted.values())
    assert report.sift_fraction == pytest.approx(kept / 500)
    assert all(rate == 0.0 for rate in report.rates.values())


def test_sift_fraction_converges_to_one_third():
    t = run_rounds(Honest(SimParams(0.5, 0.0)), 30_000, seed=8)
    report = sift(t)
    sigma = np.sqrt((1 / 3) * (2 / 3) / 30_000)
    assert abs(report.sift_fraction - 1 / 3) <= 5 * sigma


def test_eve_flip_correction_restores_y():
    t = run_rounds(MismatchedFlags(0, 1), 3000, seed=4)
    report = sift(t)
    corrected = eve_flip_correction(report, (0, 1))
    assert corrected.rates["Y"] == 0.0
    assert corrected.verdict == "protocol-consistent"


def test_eve_flip_correction_no_flags_unchanged():
    t = run_rounds(Honest(SimParams(0.5, 0.0)), 1000, seed=6)
    report = sift(t)
    assert eve_flip_correction(report, (0, 0)) == report


def test_eve_flip_correction_double_flag_unchanged():
    # both parties conjugated: Y (x) Y sign toggles twice, so nothing to undo
    t = run_rounds(MismatchedFlags(1, 1), 2000, seed=7)
    report = sift(t)
    assert sum(report.errors.values()) == 0
    assert eve_flip_correction(report, (1, 1)) == report


def test_zpremeasure_flags_always_agree():
    t = run_rounds(ZPremeasure(SimParams(0.5, 0.5)), 5000, seed=11)
    mismatches = sum(1 for r in t.rounds if r.flag_a != r.flag_b)
    assert mismatches == 0
    flags0 = sum(1 for r in t.rounds if r.flag_a == 0)
    sigma = np.sqrt(0.25 / 5000)
    assert abs(flags0 / 5000 - 0.5) <= 5 * sigma


def test_zpremeasure_deterministic_flag_degenerates_to_honest():
    tz = run_rounds(ZPremeasure(SimParams(1.0, 0.0)), 500, seed=12)
    th = run_rounds(Honest(SimParams(1.0, 0.0)), 500, seed=12)
    stripped = [(r.basis_a, r.basis_b, r.outcome_a, r.outcome_b) for r in tz.rounds]
    honest = [(r.basis_a, r.basis_b, r.outcome_a, r.outcome_b) for r in th.rounds]
    assert stripped == honest
    assert all(r.flag_a == 0 and r.flag_b == 0 for r in tz.rounds)


def test_zpremeasure_conjugate_branch_error_free():
    t = run_rounds(ZPremeasure(SimParams(0.0, 0.0)), 2000, seed=13)
    assert all(r.flag_a == 1 and r.flag_b == 1 for r in t.rounds)
    assert sum(sift(t).errors.values()) == 0


def test_zpremeasure_analysis_matches_honest():
    cmp = zpremeasure_analysis(SimParams(0.5, 0.5), 30_000, seed=14)
    assert cmp.flag_mismatches == 0
    assert cmp.within_tolerance
    for b in BASES:
        assert cmp.rate_differences[b] == pytest.approx(0.0, abs=1e-12)


def test_analyze_empty_transcript():
    t = Transcript(rounds=(), seed=0, strategy={"strategy": "honest"})
    report = analyze(t)
    assert report.verdict == "insufficient data"
    assert report.total_rounds == 0


def test_analyze_threshold():
    t = run_rounds(MismatchedFlags(0, 1), 1000, seed=15)
    assert not analyze(t).consistent
    assert analyze(t, abort_threshold=1.0).consistent


def test_custom_state_strategy():
    # non-family source: plain EPR pairs on the data qubits with flags (0, 1);
    # behaves like MismatchedFlags and is caught the same way
    rho = source_state(MismatchedFlags(0, 1))
    t = run_rounds(CustomState(DensityMatrix([2, 2, 2, 2], rho.matrix)), 1000, seed=16)
    report = sift(t)
    assert report.rates["Y"] == 1.0


def test_expected_consistency_conventions():
    assert expected_consistent(Honest(SimParams(0.5, 0.0))) is True
    assert expected_consistent(Conjugate()) is True
    assert expected_consistent(ZPremeasure(SimParams(0.5, 0.0))) is True
    assert expected_consistent(MismatchedFlags(0, 1)) is False
    assert expected_consistent(MismatchedFlags(1, 1)) is True
    assert expected_consistent(CustomState(source_state(Conjugate()))) is None


def test_conjugate_strategy_is_zero_error():
    t = run_rounds(Conjugate(), 1500, seed=17)
    assert sum(sift(t).errors.values()) == 0


def test_transcript_strategy_descriptor():
    t = run_rounds(Honest(SimParams(0.25, 0.1)), 10, seed=18)
    assert t.strategy["strategy"] == "honest"
    assert t.strategy["a"] == 0.25
    assert t.seed == 18
