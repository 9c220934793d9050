import math

import numpy as np
import pytest

from pullplan.evaluator import apply_service_sweep
from pullplan.model import FlowSpec
from pullplan.verifier import (
    VerifierError,
    _chi_marginals,
    _leq,
    brute_force_reliability,
    check_decomposition_random,
    check_nonpreemptive_monotonicity,
    check_partial_order,
    check_worst_case_bound,
    decompose,
    dense_transition_matrix,
)

Q0, Q1 = 0.7, 0.55


def expected_m0():
    return np.array([
        [1 - Q0, Q0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, 1 - Q0, Q0],
        [0, 0, 0, 1],
    ])


def expected_m1():
    return np.array([
        [1 - Q1, 0, Q1, 0],
        [0, 1 - Q1, 0, Q1],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
    ])


def expected_m01():
    return np.array([
        [1 - Q0, Q0, 0, 0],
        [0, 1 - Q1, 0, Q1],
        [0, 0, 1 - Q0, Q0],
        [0, 0, 0, 1],
    ])


def expected_m10():
    return np.array([
        [1 - Q1, 0, Q1, 0],
        [0, 1 - Q1, 0, Q1],
        [0, 0, 1 - Q0, Q0],
        [0, 0, 0, 1],
    ])


class TestDenseMatrix:
    def test_single_instance_heads(self):
        assert np.array_equal(dense_transition_matrix([0], [Q0], 2), expected_m0())
        assert np.array_equal(dense_transition_matrix([1], [Q1], 2), expected_m1())

    def test_shared_lists_both_orders(self):
        assert np.array_equal(
            dense_transition_matrix([0, 1], [Q0, Q1], 2), expected_m01()
        )
        assert np.array_equal(
            dense_transition_matrix([1, 0], [Q1, Q0], 2), expected_m10()
        )

    def test_empty_service_list_is_identity(self):
        assert np.array_equal(dense_transition_matrix([], [], 2), np.eye(4))

    def test_width_cap(self):
        with pytest.raises(VerifierError):
            dense_transition_matrix([0], [0.5], 13)


class TestDecompose:
    def test_worked_expansion(self):
        mats, problems = decompose(expected_m01(), [Q0, Q1])
        assert problems == []
        e0 = np.array([
            [-1, 1, 0, 0],
            [0, 0, 0, 0],
            [0, 0, -1, 1],
            [0, 0, 0, 0],
        ])
        e1 = np.array([
            [0, 0, 0, 0],
            [0, -1, 0, 1],
            [0, 0, 0, 0],
            [0, 0, 0, 0],
        ])
        assert np.array_equal(mats[0], e0)
        assert np.array_equal(mats[1], e1)

    def test_identity_decomposes_to_zero(self):
        mats, problems = decompose(np.eye(8), [0.5, 0.5, 0.5])
        assert problems == []
        assert all(not m.any() for m in mats)

    def test_random_pull_matrices(self):
        report = check_decomposition_random(trials=300, seed=5)
        assert report.passed, report.counterexamples[:3]

    def test_malformed_matrix_is_flagged(self):
        bad = expected_m01()
        bad[0, 3] = 0.1  # second off-diagonal entry in one row
        mats, problems = decompose(bad, [Q0, Q1])
        assert mats is None and problems


class TestPartialOrder:
    def test_explicit_chain(self):
        ff, sf, fs, ss = 0b00, 0b01, 0b10, 0b11
        assert _leq(ff, sf) and _leq(sf, ss)
        assert _leq(ff, fs) and _leq(fs, ss)
        assert not _leq(sf, fs) and not _leq(fs, sf)

    def test_width_two(self):
        assert check_partial_order(2).passed

    def test_width_ten_exhaustive(self):
        report = check_partial_order(10)
        assert report.passed
        assert report.trials == 10 * (1 << 10) ** 2


def single_hop_instance(flow: int, target: float = 0.99):
    return FlowSpec(id=flow, phase=0, period=100, deadline=100, target=target,
                    path=(f"s{flow}", "A")).instance(0)


class TestBruteForce:
    def test_closed_form_four_pulls(self):
        j0 = single_hop_instance(0)
        res = brute_force_reliability(
            [("A", [j0])] * 4, quality=lambda inst, idx: 0.7
        )
        assert res["delivery"][(0, 0)] == pytest.approx(1 - 0.3**4, abs=1e-12)

    def test_zero_pulls(self):
        j0 = single_hop_instance(0)
        res = brute_force_reliability([], quality=lambda i, t: 0.7,
                                      instances=[j0])
        assert res["delivery"][(0, 0)] == 0.0

    def test_matches_sweep_on_shared_lists(self):
        # Independent oracle against the evaluator's sparse sweep.
        import random

        rng = random.Random(9)
        insts = [single_hop_instance(i) for i in range(3)]
        for _ in range(40):
            n_pulls = rng.randint(1, 8)
            pulls = []
            quals = []
            for _ in range(n_pulls):
                size = rng.randint(1, 3)
                chosen = sorted(rng.sample(range(3), size))
                pulls.append(("A", [insts[i] for i in chosen]))
                quals.append({i: rng.uniform(0.3, 1.0) for i in chosen})
            res = brute_force_reliability(
                pulls, quality=lambda inst, idx: quals[idx][inst.flow],
                instances=insts,
            )
            dist = np.zeros(8)
            dist[0] = 1.0
            for (coord, srv), qmap in zip(pulls, quals):
                slots = [i.flow for i in srv]
                dist = apply_service_sweep(dist, slots,
                                           [qmap[s] for s in slots])
            marg = _chi_marginals(dist, 3)
            for i in range(3):
                traj = res["executed"][(i, 0, 0)]
                assert traj[-1] == pytest.approx(marg[i], abs=1e-9)

    def test_caps(self):
        j = [single_hop_instance(i) for i in range(4)]
        with pytest.raises(VerifierError):
            brute_force_reliability([("A", j)], quality=lambda i, t: 0.5)
        with pytest.raises(VerifierError):
            brute_force_reliability([("A", j[:1])] * 9, quality=lambda i, t: 0.5)


class TestWorstCaseBound:
    def test_all_floor_is_equality(self):
        dist = np.zeros(4)
        dist[0] = 1.0
        pinned = dist.copy()
        for slots in ([0], [0, 1], [1, 0], [1]):
            dist = apply_service_sweep(dist, slots, [0.7] * len(slots))
            pinned = apply_service_sweep(pinned, slots, [0.7] * len(slots))
            assert np.abs(dist - pinned).max() <= 1e-12

    def test_perfect_links_dominate(self):
        dist = np.zeros(4)
        dist[0] = 1.0
        pinned = dist.copy()
        for slots in ([0, 1], [0, 1], [1, 0]):
            dist = apply_service_sweep(dist, slots, [1.0] * 2)
            pinned = apply_service_sweep(pinned, slots, [0.7] * 2)
        assert (_chi_marginals(dist, 2) >= _chi_marginals(pinned, 2) - 1e-12).all()

    def test_randomised_trials(self):
        report = check_worst_case_bound(trials=1500, width=4, horizon=12, seed=21)
        assert report.passed, report.counterexamples[:3]


class TestMonotonicity:
    def test_closed_form_single_instance(self):
        for q in np.arange(0.5, 1.0001, 0.05):
            dist = np.zeros(2)
            dist[0] = 1.0
            for _ in range(5):
                dist = apply_service_sweep(dist, [0], [q])
            assert dist[1] == pytest.approx(1 - (1 - q) ** 5, abs=1e-12)

    def test_perfect_quality_saturates(self):
        dist = np.zeros(8)
        dist[0] = 1.0
        for _ in range(3):
            dist = apply_service_sweep(dist, [0, 1, 2], [1.0] * 3)
        assert _chi_marginals(dist, 3).tolist() == [1.0, 1.0, 1.0]

    def test_randomised_grid(self):
        report = check_nonpreemptive_monotonicity(trials=250, seed=2)
        assert report.passed, report.counterexamples[:3]


class TestIncreasingVectorLemmas:
    """Random increasing vectors stay increasing under pull transitions,
    and floor-pinned transitions are dominated component-wise."""

    @staticmethod
    def increasing_vector(rng, width):
        weights = [rng.uniform(0.0, 1.0) for _ in range(width)]
        base = rng.uniform(0.0, 0.5)
        return np.array([
            base + sum(w for b, w in enumerate(weights) if mask & (1 << b))
            for mask in range(1 << width)
        ])

    def test_preservation_and_domination(self):
        import random

        rng = random.Random(13)
        for _ in range(200):
            width = rng.randint(1, 4)
            size = rng.randint(1, width)
            slots = rng.sample(range(width), size)
            floor = rng.uniform(0.2, 0.9)
            qs = [rng.uniform(floor, 1.0) for _ in slots]
            mat = dense_transition_matrix(slots, qs, width)
            pinned = dense_transition_matrix(slots, [floor] * size, width)
            f = self.increasing_vector(rng, width)
            g = mat @ f
            g_pinned = pinned @ f
            for s1 in range(1 << width):
                for s2 in range(1 << width):
                    if _leq(s1, s2):
                        assert g[s1] <= g[s2] + 1e-12
            assert (g >= g_pinned - 1e-12).all()
