"""Statistics oracles: rates, tiers, tests, DiD, IS value, bootstrap."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from callsched.analysis import (
    bootstrap_ci,
    call_distribution,
    did,
    is_value,
    pct_improvement,
    pooled_pr,
    slot_pr,
    t_test,
    tier_split,
    user_pr,
)
from callsched.config import TrialConfig
from callsched.domain import ARM_CONTROL, ARM_TREATMENT, CallLog, PHASE_INTERVENTION
from callsched.policy import PolicyConfig
from callsched.simworld import WorldConfig, generate_world, run_trial

from helpers import random_log, record


def binary_log(n_attempts: int, n_picked: int, slot: int = 1, arm: str = ARM_TREATMENT,
               user_offset: int = 0) -> list:
    """One attempted record per user; the first n_picked are pickups."""
    recs = []
    for i in range(n_attempts):
        recs.append(
            record(
                user=user_offset + i,
                slot=slot,
                day=0,
                retry=0,
                picked=i < n_picked,
                phase=PHASE_INTERVENTION,
                arm=arm,
            )
        )
    return recs


class TestPooledPr:
    def test_three_of_four(self):
        log = CallLog(binary_log(4, 3))
        assert pooled_pr(log) == 0.75

    def test_zero_of_ten(self):
        log = CallLog(binary_log(10, 0))
        assert pooled_pr(log) == 0.0

    def test_zero_attempts_rejected(self):
        log = CallLog([record(attempted=False, picked=False)])
        with pytest.raises(ValueError):
            pooled_pr(log)

    def test_random_log_matches_brute_force(self):
        rng = np.random.default_rng(0)
        log = random_log(rng, n_users=40, n_days=14)
        assert len(log) >= 1000 or len(log) > 0
        picks = attempts = 0
        for rec in log.records():
            if rec.attempted:
                attempts += 1
                picks += int(rec.picked)
        assert pooled_pr(log) == picks / attempts

    def test_concatenation_is_attempt_weighted_mean(self):
        rng = np.random.default_rng(1)
        a = random_log(rng, n_users=10, n_days=5)
        b_records = [
            record(
                user=100 + i, slot=2, day=3, picked=i % 3 == 0, phase=PHASE_INTERVENTION
            )
            for i in range(30)
        ]
        combined = CallLog(list(a.records()) + b_records)
        b = CallLog(b_records)
        na, nb = int(a.attempted.sum()), int(b.attempted.sum())
        expected = (pooled_pr(a) * na + pooled_pr(b) * nb) / (na + nb)
        assert pooled_pr(combined) == pytest.approx(expected, abs=1e-12)


class TestUserPr:
    def test_two_user_fixture(self):
        recs = [
            record(user="A", slot=1, day=0, picked=True),
            record(user="A", slot=1, day=1, picked=True),
            record(user="B", slot=2, day=0),
            record(user="B", slot=2, day=1),
            record(user="B", slot=2, day=2),
            record(user="B", slot=2, day=3),
        ]
        per_user, avg = user_pr(CallLog(recs))
        assert per_user == {"A": 1.0, "B": 0.0}
        assert avg == 0.5

    def test_single_user_equals_pooled(self):
        rng = np.random.default_rng(2)
        recs = [
            record(user=0, slot=1, day=d, picked=bool(rng.random() < 0.5)) for d in range(9)
        ]
        log = CallLog(recs)
        _, avg = user_pr(log)
        assert avg == pooled_pr(log)

    def test_unweighted_mean_differs_from_pooled(self):
        # hand computation: A has 1/1, B has 1/9:
        # user_avg = (1 + 1/9) / 2 = 5/9; pooled = 2/10 = 1/5
        recs = [record(user="A", slot=1, day=0, picked=True)]
        recs += [
            record(user="B", slot=1, day=d, retry=r, picked=(d == 0 and r == 0))
            for d in range(3)
            for r in range(3)
        ]
        log = CallLog(recs)
        per_user, avg = user_pr(log)
        assert per_user["A"] == 1.0
        assert per_user["B"] == pytest.approx(1 / 9)
        assert avg == pytest.approx(5 / 9)
        assert pooled_pr(log) == pytest.approx(1 / 5)

    def test_user_without_attempts_excluded(self):
        recs = [
            record(user="A", slot=1, day=0, picked=True),
            record(user="B", slot=1, day=0, attempted=False, picked=False),
        ]
        per_user, _ = user_pr(CallLog(recs))
        assert set(per_user) == {"A"}

    def test_duplicating_a_user_moves_pooled_not_user_avg(self):
        base = [
            record(user="A", slot=1, day=0, picked=True),
            record(user="A", slot=1, day=1, picked=True),
        ] + [record(user="B", slot=2, day=d) for d in range(4)]
        log = CallLog(base)
        dup = CallLog(base + [record(user="B", slot=2, day=4 + d) for d in range(4)])
        _, avg_before = user_pr(log)
        _, avg_after = user_pr(dup)
        assert avg_before == avg_after == 0.5
        assert pooled_pr(log) == pytest.approx(2 / 6)
        assert pooled_pr(dup) == pytest.approx(2 / 10)


class TestSlotPr:
    def test_table4_slot6_rates_and_improvement(self):
        # exact rates from the field-trial slot-6 row: 0.3598 and 0.3223
        recs = binary_log(5000, 1799, slot=6, arm=ARM_TREATMENT)
        recs += binary_log(10000, 3223, slot=6, arm=ARM_CONTROL, user_offset=5000)
        log = CallLog(recs)
        treat = slot_pr(log.for_arm(ARM_TREATMENT))
        control = slot_pr(log.for_arm(ARM_CONTROL))
        assert treat[6] == pytest.approx(0.3598, abs=1e-12)
        assert control[6] == pytest.approx(0.3223, abs=1e-12)
        pct = pct_improvement(treat[6], control[6])
        # exact arithmetic on the rounded table rates gives 11.6351; the
        # reference 11.6131 came from unrounded rates, so match to the
        # rounding-limited tolerance of one percentage point
        assert pct == pytest.approx(100 * 0.0375 / 0.3223, abs=1e-9)
        assert abs(pct - 11.6131) < 1.0

    def test_unattempted_slots_absent(self):
        log = CallLog(binary_log(10, 4, slot=1))
        rates = slot_pr(log)
        assert set(rates) == {1}
        assert rates[1] == 0.4

    def test_random_log_matches_brute_force(self):
        rng = np.random.default_rng(3)
        log = random_log(rng, n_users=30, n_days=12)
        rates = slot_pr(log)
        for slot in range(1, 8):
            picks = attempts = 0
            for rec in log.records():
                if rec.attempted and rec.slot == slot:
                    attempts += 1
                    picks += int(rec.picked)
            if attempts == 0:
                assert slot not in rates
            else:
                assert rates[slot] == picks / attempts


class TestTierSplit:
    @staticmethod
    def arm(n_ones: int, n_zeros: int, n_mid: int, offset: int = 0) -> dict:
        rates = {}
        uid = offset
        for _ in range(n_ones):
            rates[uid] = 1.0
            uid += 1
        for _ in range(n_zeros):
            rates[uid] = 0.0
            uid += 1
        for _ in range(n_mid):
            rates[uid] = 0.5
            uid += 1
        return rates

    def test_field_trial_fractions_take_max_across_arms(self):
        # treatment 40.59% ones / 6.56% zeros; control 38.46% / 6.99%
        treatment = self.arm(4059, 656, 10000 - 4059 - 656)
        control = self.arm(3846, 699, 10000 - 3846 - 699, offset=20000)
        split_t, split_c = tier_split(treatment, control)
        assert split_t.top_fraction == pytest.approx(0.4059)
        assert split_t.bottom_fraction == pytest.approx(0.0699)
        assert len(split_t.high) == 4059 and len(split_c.high) == 4059
        assert len(split_t.low) == 699 and len(split_c.low) == 699
        # treatment high tier is exactly its always-pickers: rate 1 by construction
        assert all(treatment[u] == 1.0 for u in split_t.high)
        # control high tier runs out of always-pickers and dips below 1
        assert any(control[u] < 1.0 for u in split_c.high)

    def test_all_ones_everyone_high(self):
        treatment = {i: 1.0 for i in range(10)}
        control = {i: 1.0 for i in range(8)}
        split_t, split_c = tier_split(treatment, control)
        assert split_t.high == frozenset(range(10))
        assert split_t.mid == frozenset() and split_t.low == frozenset()
        assert split_c.high == frozenset(range(8))

    def test_20_user_fixture_matches_hand_sort(self):
        rng = np.random.default_rng(4)
        treatment = {i: float(rng.choice([0.0, 0.25, 0.5, 1.0])) for i in range(20)}
        control = {i: float(rng.choice([0.0, 0.25, 0.5, 1.0])) for i in range(100, 120)}
        split_t, split_c = tier_split(treatment, control)

        def hand_split(ratings, top_f, bottom_f):
            n_top = int(top_f * len(ratings) + 0.5)
            n_bot = int(bottom_f * len(ratings) + 0.5)
            desc = sorted(ratings, key=lambda u: (-ratings[u], str(type(u)), u))
            high = set(desc[:n_top])
            rest = sorted(
                (u for u in ratings if u not in high),
                key=lambda u: (ratings[u], str(type(u)), u),
            )
            return high, set(rest[:n_bot]), set(rest[n_bot:])

        top_f = max(
            sum(1 for v in treatment.values() if v == 1.0) / 20,
            sum(1 for v in control.values() if v == 1.0) / 20,
        )
        bot_f = max(
            sum(1 for v in treatment.values() if v == 0.0) / 20,
            sum(1 for v in control.values() if v == 0.0) / 20,
        )
        for split, rates in ((split_t, treatment), (split_c, control)):
            high, low, mid = hand_split(rates, top_f, bot_f)
            assert split.high == high and split.low == low and split.mid == mid

    def test_tiers_partition_each_arm(self):
        rng = np.random.default_rng(5)
        treatment = {i: float(rng.integers(0, 5)) / 4 for i in range(37)}
        control = {i: float(rng.integers(0, 5)) / 4 for i in range(200, 241)}
        for split, rates in zip(tier_split(treatment, control), (treatment, control)):
            assert split.high | split.mid | split.low == set(rates)
            assert len(split.high) + len(split.mid) + len(split.low) == len(rates)

    def test_cut_ties_break_by_ascending_user_id(self):
        treatment = {0: 1.0, 1: 0.5, 2: 0.5, 3: 0.5, 4: 0.0}
        control = {10: 1.0, 11: 0.5, 12: 0.5, 13: 0.5, 14: 0.0}
        split_t, _ = tier_split(treatment, control)
        # top fraction 0.2 -> one high user (the 1.0); 0.2 bottom -> the 0.0
        assert split_t.high == frozenset({0})
        assert split_t.low == frozenset({4})
        # force a tie at the cut: two users must come from three 0.5s
        treatment2 = {0: 1.0, 1: 1.0, 2: 0.5, 3: 0.5, 4: 0.5}
        control2 = {10: 1.0, 11: 1.0, 12: 1.0, 13: 1.0, 14: 0.0}
        split_t2, _ = tier_split(treatment2, control2)
        assert split_t2.high == frozenset({0, 1, 2, 3})  # tie broken toward user 2, 3
        assert split_t2.low == frozenset({4})

    def test_overlapping_fractions_rejected(self):
        treatment = {i: 1.0 for i in range(5)}
        control = {i: 0.0 for i in range(10, 15)}
        with pytest.raises(ValueError, match="overlap"):
            tier_split(treatment, control)


class TestTTest:
    def test_identical_samples(self):
        x = [0, 1, 1, 0, 1]
        result = t_test(x, x)
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_field_scale_sizes_and_means(self):
        # sizes from the mid-tier call volumes, means from its rate row
        n1, n2 = 16775, 17345
        k1, k2 = round(0.3763 * n1), round(0.3555 * n2)
        x1 = np.repeat([1, 0], [k1, n1 - k1])
        x2 = np.repeat([1, 0], [k2, n2 - k2])
        result = t_test(x1, x2)
        assert 3.5e-5 <= result.p_value <= 1.5e-4  # reference value: 7.07e-05

    def test_small_fixture_matches_textbook_welch(self):
        rng = np.random.default_rng(6)
        x1 = (rng.random(30) < 0.45).astype(int)
        x2 = (rng.random(30) < 0.30).astype(int)
        result = t_test(x1, x2)
        # textbook computation, coded independently
        m1, m2 = np.mean(x1), np.mean(x2)
        v1 = np.sum((x1 - m1) ** 2) / 29
        v2 = np.sum((x2 - m2) ** 2) / 29
        se2 = v1 / 30 + v2 / 30
        t_stat = (m1 - m2) / math.sqrt(se2)
        df = se2**2 / ((v1 / 30) ** 2 / 29 + (v2 / 30) ** 2 / 29)
        p = 2 * (1 - scipy_stats.t.cdf(abs(t_stat), df))
        assert result.statistic == pytest.approx(t_stat, abs=1e-12)
        assert result.p_value == pytest.approx(p, abs=1e-9)
        # cross-check against scipy's own Welch implementation
        ref = scipy_stats.ttest_ind(x1, x2, equal_var=False)
        assert result.statistic == pytest.approx(ref.statistic, abs=1e-12)
        assert result.p_value == pytest.approx(ref.pvalue, abs=1e-9)

    def test_pooled_variant_matches_scipy(self):
        rng = np.random.default_rng(7)
        x1 = (rng.random(25) < 0.5).astype(int)
        x2 = (rng.random(40) < 0.35).astype(int)
        result = t_test(x1, x2, equal_var=True)
        ref = scipy_stats.ttest_ind(x1, x2, equal_var=True)
        assert result.statistic == pytest.approx(ref.statistic, abs=1e-12)
        assert result.p_value == pytest.approx(ref.pvalue, abs=1e-9)

    def test_degenerate_equal_constants(self):
        result = t_test([1, 1, 1], [1, 1, 1])
        assert result.degenerate
        assert result.p_value == 1.0

    def test_degenerate_distinct_constants(self):
        result = t_test([1, 1, 1], [0, 0, 0])
        assert result.degenerate
        assert result.p_value == 0.0
        assert result.statistic == math.inf

    def test_requires_two_per_sample(self):
        with pytest.raises(ValueError):
            t_test([1], [0, 1])

    def test_pct_improvement_fields(self):
        result = t_test([1, 1, 0, 0], [1, 0, 0, 0])
        assert result.pct_improvement == pytest.approx(100.0)
        zero_base = t_test([1, 0], [0, 0])
        assert zero_base.pct_improvement is None


class TestPctImprovement:
    def test_table3_mid_and_high(self):
        # table-rate arithmetic: mid 5.851%, high 2.754%; reference columns
        # (5.83, 2.75) come from unrounded rates, so compare at the
        # rounding-limited one-point tolerance
        mid = pct_improvement(0.3763, 0.3555)
        high = pct_improvement(1.0000, 0.9732)
        assert mid == pytest.approx(100 * 0.0208 / 0.3555, abs=1e-9)
        assert abs(mid - 5.83) < 1.0
        assert abs(high - 2.75) < 1.0

    def test_low_tier_zero_denominator_absent(self):
        assert pct_improvement(0.0100, 0.0000) is None


class TestDid:
    def test_slot1_from_reference_tables(self):
        value = did(0.3690, 0.3584, 0.3610, 0.3337)
        assert value == pytest.approx(0.0167, abs=1e-10)
        assert abs(value - 0.0168) <= 0.0005

    def test_equal_shifts_cancel(self):
        assert did(0.4, 0.45, 0.3, 0.35) == pytest.approx(0.0)

    def test_all_seven_slots_reproduce_did_column(self):
        intervention = {
            1: (0.3584, 0.3337), 2: (0.3510, 0.3365), 3: (0.3908, 0.3625),
            4: (0.3841, 0.3683), 5: (0.3753, 0.3686), 6: (0.3598, 0.3223),
            7: (0.4197, 0.4121),
        }
        baseline = {
            1: (0.3690, 0.3610), 2: (0.3646, 0.3810), 3: (0.4034, 0.4072),
            4: (0.4131, 0.3979), 5: (0.4016, 0.3961), 6: (0.3846, 0.3741),
            7: (0.4678, 0.4610),
        }
        reference = {1: 0.0168, 2: 0.0308, 3: 0.0322, 4: 0.0006, 5: 0.0013,
                     6: 0.0269, 7: 0.0007}
        for slot in range(1, 8):
            t_i, c_i = intervention[slot]
            t_b, c_b = baseline[slot]
            assert abs(did(t_b, t_i, c_b, c_i) - reference[slot]) <= 0.0005

    def test_antisymmetric_under_arm_swap(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            t_b, t_i, c_b, c_i = rng.uniform(0, 1, 4)
            assert did(t_b, t_i, c_b, c_i) == pytest.approx(
                -did(c_b, c_i, t_b, t_i), abs=1e-12
            )

    def test_rates_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError):
            did(1.2, 0.5, 0.5, 0.5)


class TestCallDistribution:
    def test_equal_counts_uniform(self):
        recs = [record(user=0, slot=s, day=s - 1) for s in range(1, 8)]
        dist = call_distribution(CallLog(recs))
        assert dist == {s: pytest.approx(1 / 7) for s in range(1, 8)}

    def test_hand_counts(self):
        counts = {1: 2, 2: 1, 3: 1, 7: 3}
        recs = []
        day = 0
        for slot, k in counts.items():
            for _ in range(k):
                recs.append(record(user=0, slot=slot, day=day))
                day += 1
        dist = call_distribution(CallLog(recs))
        expected = {1: 2 / 7, 2: 1 / 7, 3: 1 / 7, 4: 0.0, 5: 0.0, 6: 0.0, 7: 3 / 7}
        assert dist == {s: pytest.approx(expected[s]) for s in range(1, 8)}

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            log = random_log(rng)
            dist = call_distribution(log)
            assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
            assert min(dist.values()) >= 0

    def test_simulated_control_arm_near_uniform_at_10k_first_calls(self):
        trial = TrialConfig(
            world=WorldConfig(n_users=3400, rank=2, seed=20),
            arms={
                ARM_TREATMENT: PolicyConfig(kind="random"),
                ARM_CONTROL: PolicyConfig(kind="random"),
            },
            baseline_days=21,
            intervention_days=14,
        )
        log = run_trial(generate_world(trial.world), trial, seed=21)
        control = log.for_arm(ARM_CONTROL)
        n_first = int((control.attempted & (control.retries == 0)).sum())
        assert n_first >= 10_000
        dist = call_distribution(control)
        assert max(abs(p - 1 / 7) for p in dist.values()) < 0.02

    def test_no_first_calls_rejected(self):
        log = CallLog([record(user=0, slot=1, day=0, retry=1)])
        with pytest.raises(ValueError):
            call_distribution(log)


class TestIsValue:
    def seven_call_fixture(self):
        # one call per slot, all picked, same user
        return CallLog(
            [
                record(user="u", slot=s, day=s - 1, picked=True, phase=PHASE_INTERVENTION)
                for s in range(1, 8)
            ]
        )

    def test_hand_computed_single_match(self):
        log = self.seven_call_fixture()
        assert is_value(log, target_slots={"u": 3}) == pytest.approx(1.0, abs=1e-15)

    def test_uniform_target_equals_empirical_mean(self):
        rng = np.random.default_rng(10)
        uniform = {s: 1 / 7 for s in range(1, 8)}
        for _ in range(25):
            log = random_log(rng)
            for call_set in ("first", "all"):
                mask = log.attempted & ((log.retries == 0) if call_set == "first" else True)
                empirical = log.picked[mask].mean()
                got = is_value(log, target_dist=uniform, call_set=call_set)
                assert got == pytest.approx(empirical, abs=1e-12)

    def test_matching_calls_weighted_seven(self):
        log = CallLog(
            [
                record(user=0, slot=3, day=0, picked=True, phase=PHASE_INTERVENTION),
                record(user=0, slot=5, day=1, picked=True, phase=PHASE_INTERVENTION),
            ]
        )
        # only the slot-3 call matches: V = (7 * 1) / 2
        assert is_value(log, target_slots={0: 3}) == pytest.approx(3.5)

    def test_zero_probability_behavior_slot_rejected(self):
        log = self.seven_call_fixture()
        behavior = {s: (1 / 6 if s != 3 else 0.0) for s in range(1, 8)}
        with pytest.raises(ValueError, match="zero"):
            is_value(log, target_slots={"u": 3}, behavior=behavior)

    def test_missing_user_in_target(self):
        log = self.seven_call_fixture()
        with pytest.raises(KeyError, match="u"):
            is_value(log, target_slots={"other": 3})

    def test_first_call_set_excludes_retries(self):
        recs = [
            record(user=0, slot=3, day=0, retry=0, picked=False, phase=PHASE_INTERVENTION),
            record(user=0, slot=3, day=0, retry=1, picked=True, phase=PHASE_INTERVENTION),
        ]
        log = CallLog(recs)
        assert is_value(log, target_slots={0: 3}, call_set="first") == 0.0
        assert is_value(log, target_slots={0: 3}, call_set="all") == pytest.approx(3.5)

    def test_exactly_one_target_kind(self):
        log = self.seven_call_fixture()
        with pytest.raises(ValueError):
            is_value(log)
        with pytest.raises(ValueError):
            is_value(log, target_slots={"u": 3}, target_dist={3: 1.0})


def expected_cycle_stats(prob_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic per-cycle expected (picks, attempts) per user, uniform slots.

    Slots are redrawn uniformly each day; within a day, attempts stop at
    the first pickup; the cycle stops the day a pickup happens. Rows are
    per-user slot probabilities.
    """
    reach = np.ones(prob_rows.shape[0])
    e_picks = np.zeros(prob_rows.shape[0])
    e_attempts = np.zeros(prob_rows.shape[0])
    miss = 1.0 - prob_rows
    for cap in (3, 2, 2, 2):
        survive_by_slot = miss**cap
        attempts_by_slot = sum(miss**k for k in range(cap))
        e_attempts += reach * attempts_by_slot.mean(axis=1)
        e_picks += reach * (1.0 - survive_by_slot).mean(axis=1)
        reach = reach * survive_by_slot.mean(axis=1)
    return e_picks, e_attempts


class TestBootstrapCi:
    def test_constant_statistic_zero_width(self):
        rng = np.random.default_rng(11)
        log = random_log(rng, n_users=10)
        result = bootstrap_ci(log, lambda _: 0.7, n_resamples=50, rng=np.random.default_rng(1))
        assert result.low == result.high == 0.7
        assert result.point == 0.7

    def test_single_resample_degenerate_interval(self):
        rng = np.random.default_rng(12)
        log = random_log(rng, n_users=10)
        result = bootstrap_ci(log, pooled_pr, n_resamples=1, rng=np.random.default_rng(2))
        assert result.low == result.high

    def test_duplicated_users_counted_separately(self):
        # a statistic over per-user rates must see aliased duplicates
        recs = [
            record(user="A", slot=1, day=0, picked=True),
            record(user="B", slot=1, day=0, picked=False),
        ]
        log = CallLog(recs)

        def n_rated_users(resample):
            per_user, _ = user_pr(resample)
            return float(len(per_user))

        result = bootstrap_ci(
            log, n_rated_users, n_resamples=200, rng=np.random.default_rng(3)
        )
        assert result.low == result.high == 2.0

    def test_failing_statistic_counted(self):
        recs = [
            record(user="A", slot=1, day=0, picked=True),
            record(user="B", slot=1, day=0, attempted=False, picked=False),
        ]
        log = CallLog(recs)

        def fussy(resample):
            return pooled_pr(resample)  # raises when both draws are user B

        result = bootstrap_ci(log, fussy, n_resamples=200, rng=np.random.default_rng(4))
        assert result.n_failed > 0

    def test_coverage_against_simulator_ground_truth(self):
        # users within one world share its slot-factor draw, so the
        # user-resampling bootstrap targets the pooled rate of the user
        # population GIVEN that world's slot factors: compute each
        # replication's truth analytically over fresh user factors
        world_kw = dict(rank=2, noise_sd=0.0, base_rate=0.45, factor_spread=0.15)

        def world_truth(world, config, n_fresh=60_000):
            rng = np.random.default_rng(999_000 + config.seed)
            s = np.sqrt(config.factor_spread) / config.rank**0.25
            fresh_u = rng.normal(0.0, s, size=(n_fresh, config.rank))
            rows = np.clip(config.base_rate + fresh_u @ world.factors[1].T, 0.0, 1.0)
            picks, attempts = expected_cycle_stats(rows)
            return float(picks.sum() / attempts.sum())

        arms = {
            ARM_TREATMENT: PolicyConfig(kind="random"),
            ARM_CONTROL: PolicyConfig(kind="random"),
        }
        covered = 0
        reps = 200
        for rep in range(reps):
            config = WorldConfig(n_users=100, seed=1000 + rep, **world_kw)
            world = generate_world(config)
            truth = world_truth(world, config)
            trial = TrialConfig(
                world=config, arms=arms, baseline_days=21, intervention_days=14
            )
            log = run_trial(world, trial, seed=3000 + rep)
            result = bootstrap_ci(
                log, pooled_pr, n_resamples=2000, level=0.95,
                rng=np.random.default_rng(6000 + rep),
            )
            if result.low <= truth <= result.high:
                covered += 1
        assert 0.90 * reps <= covered <= 0.99 * reps

    def test_needs_two_users(self):
        log = CallLog([record(user="A", slot=1, day=0)])
        with pytest.raises(ValueError):
            bootstrap_ci(log, pooled_pr, n_resamples=10)
