"""Statistics tests with brute-force oracles."""

import itertools

import numpy as np
import pytest

from spkaug import evaluation as ev


def rating(system="s", split="train", mos=3, dmos=3, guess="American",
           true="American", listener="l1", utt="u1"):
    return ev.RatingRecord(listener, utt, system, split, mos, dmos, guess, true)


class TestConfusion:
    def test_counting_and_row_normalization(self):
        ratings = [rating(guess=g) for g in
                   ["American", "American", "Canadian"]]
        cm = ev.confusion_from_ratings(ratings)
        norm, empty = cm.normalized()
        np.testing.assert_allclose(norm[0], [2 / 3, 1 / 3, 0, 0, 0, 0])
        assert not empty[0]

    def test_empty_rows_flagged(self):
        cm = ev.confusion_from_ratings([rating()])
        norm, empty = cm.normalized()
        assert empty.sum() == 5
        np.testing.assert_array_equal(norm[1:], np.zeros((5, 6)))

    def test_perfect_identification_is_identity(self):
        ratings = [rating(guess=c, true=c) for c in ev.DIALECT_CATEGORIES]
        norm, _ = ev.confusion_from_ratings(ratings).normalized()
        np.testing.assert_array_equal(norm, np.eye(6))

    def test_unknown_category_rejected(self):
        with pytest.raises(ValueError, match="Martian"):
            ev.confusion_from_ratings([rating(guess="Martian")])

    def test_order_invariance(self):
        rng = np.random.default_rng(0)
        ratings = [rating(guess=ev.DIALECT_CATEGORIES[rng.integers(6)],
                          true=ev.DIALECT_CATEGORIES[rng.integers(6)])
                   for _ in range(50)]
        a = ev.confusion_from_ratings(ratings).counts
        b = ev.confusion_from_ratings(ratings[::-1]).counts
        np.testing.assert_array_equal(a, b)


class TestFrobenius:
    def test_identical_is_zero(self):
        a = np.random.default_rng(1).random((6, 6))
        assert ev.frobenius(a, a) == 0.0

    def test_identity_vs_anti_identity(self):
        assert ev.frobenius(np.eye(2), np.array([[0, 1], [1, 0]])) == 2.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.random((6, 6))
            b = rng.random((6, 6))
            a /= a.sum(axis=1, keepdims=True)
            b /= b.sum(axis=1, keepdims=True)
            total = 0.0
            for i in range(6):
                for j in range(6):
                    total += (a[i][j] - b[i][j]) ** 2
            assert abs(ev.frobenius(a, b) - total ** 0.5) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ev.frobenius(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_metric_properties_spot_check(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b, c = (rng.random((4, 4)) for _ in range(3))
            dab, dba = ev.frobenius(a, b), ev.frobenius(b, a)
            assert dab == dba >= 0
            assert ev.frobenius(a, c) <= dab + ev.frobenius(b, c) + 1e-12
        assert ev.frobenius(a, a) == 0.0

    def test_confusion_distance_normalize_flag(self):
        heavy = ev.confusion_from_ratings([rating()] * 30)
        light = ev.confusion_from_ratings([rating()] * 3)
        assert ev.confusion_distance(heavy, light, normalize=True) == 0.0
        assert ev.confusion_distance(heavy, light, normalize=False) > 0


def brute_force_p(x, y):
    pooled = list(x) + list(y)
    n1 = len(x)
    ranks = ev._midranks(np.array(pooled, dtype=float))
    u_obs = ranks[:n1].sum() - n1 * (n1 + 1) / 2
    total = n1 * len(y)
    stat = min(u_obs, total - u_obs)
    hits = count = 0
    for combo in itertools.combinations(range(len(pooled)), n1):
        u = ranks[list(combo)].sum() - n1 * (n1 + 1) / 2
        count += 1
        if min(u, total - u) <= stat + 1e-12:
            hits += 1
    return u_obs, hits / count


class TestMannWhitney:
    def test_spec_example_no_overlap(self):
        result = ev.mann_whitney_u([1, 2], [3, 4])
        assert result.U == 0.0
        assert result.p_two_sided == pytest.approx(1 / 3)

    def test_spec_example_total_ties(self):
        result = ev.mann_whitney_u([3, 3, 3], [3, 3, 3])
        assert result.U == 4.5
        assert result.p_two_sided == 1.0

    def test_spec_example_three_vs_three(self):
        result = ev.mann_whitney_u([5, 6, 7], [1, 2, 3])
        assert result.U == 9.0
        assert result.p_two_sided == pytest.approx(0.1)

    def test_exact_matches_enumeration_up_to_10(self):
        rng = np.random.default_rng(4)
        for n1 in range(1, 6):
            for n2 in range(1, 6):
                for _ in range(6):
                    x = rng.integers(1, 6, n1).tolist()
                    y = rng.integers(1, 6, n2).tolist()
                    got = ev.mann_whitney_u(x, y, "exact")
                    u_b, p_b = brute_force_p(x, y)
                    assert got.U == pytest.approx(u_b)
                    assert got.p_two_sided == pytest.approx(p_b, abs=1e-12)

    def test_u_sum_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n1, n2 = rng.integers(1, 12, 2)
            x = rng.integers(1, 6, n1).tolist()
            y = rng.integers(1, 6, n2).tolist()
            ux = ev.mann_whitney_u(x, y, "normal").U
            uy = ev.mann_whitney_u(y, x, "normal").U
            assert ux + uy == pytest.approx(n1 * n2)

    def test_normal_close_to_exact_untied(self):
        # exhaustive over all untied 6/6 splits of 12 distinct values
        worst = 0.0
        vals = list(range(12))
        for combo in itertools.combinations(range(12), 6):
            x = [vals[i] for i in combo]
            y = [vals[i] for i in range(12) if i not in combo]
            pe = ev.mann_whitney_u(x, y, "exact").p_two_sided
            pn = ev.mann_whitney_u(x, y, "normal").p_two_sided
            worst = max(worst, abs(pe - pn))
        assert worst < 0.02

    def test_exact_size_limit(self):
        with pytest.raises(ValueError, match="<= 12"):
            ev.mann_whitney_u([1] * 7, [2] * 6, "exact")

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ev.mann_whitney_u([], [1])

    def test_all_tied_normal_mode(self):
        result = ev.mann_whitney_u([2] * 8, [2] * 8, "normal")
        assert result.p_two_sided == 1.0


class TestMosTable:
    def test_mean_rounds_half_up(self):
        ratings = [rating(mos=v) for v in (4, 4, 3)]
        table = ev.mos_table(ratings, "mos")
        assert table.cells[("s", "train")].mean == 3.7

    def test_exact_half_rounds_up(self):
        # 20 ratings summing to 73 -> mean exactly 3.65 -> 3.7
        values = [4] * 13 + [3] * 7
        table = ev.mos_table([rating(mos=v) for v in values], "mos")
        assert sum(values) == 73
        assert table.cells[("s", "train")].mean == 3.7

    def test_single_rating(self):
        table = ev.mos_table([rating(mos=5)], "mos")
        assert table.cells[("s", "train")].mean == 5.0

    def test_missing_cells_absent_not_zero(self):
        table = ev.mos_table([rating(split="train"), rating(split="dev")])
        assert ("s", "test") not in table.cells

    def test_layout_systems_by_splits(self):
        ratings = []
        for system in ("natural", "phone baseline", "phone 5c"):
            for split in ("train", "dev", "test"):
                ratings.append(rating(system=system, split=split))
        table = ev.mos_table(ratings)
        assert table.splits == ("train", "dev", "test")
        assert set(table.systems) == {"natural", "phone baseline", "phone 5c"}

    def test_dmos_measure(self):
        table = ev.mos_table([rating(dmos=2), rating(dmos=3)], "dmos")
        assert table.cells[("s", "train")].mean == 2.5

    def test_order_invariance(self):
        rng = np.random.default_rng(6)
        ratings = [rating(mos=int(rng.integers(1, 6)), utt=f"u{i}")
                   for i in range(30)]
        a = ev.mos_table(ratings).cells[("s", "train")].mean
        b = ev.mos_table(ratings[::-1]).cells[("s", "train")].mean
        assert a == b


class TestSignificance:
    def _table(self, sys_values, base_values, system="sys", base="base"):
        ratings = [rating(system=system, mos=v, utt=f"a{i}")
                   for i, v in enumerate(sys_values)]
        ratings += [rating(system=base, mos=v, utt=f"b{i}")
                    for i, v in enumerate(base_values)]
        return ev.mos_table(ratings)

    def test_identical_cells_not_significant(self):
        table = self._table([3, 4, 3, 4], [3, 4, 3, 4])
        marks = ev.significance_marks(table, {"sys": "base"})
        assert marks[("sys", "train")] == "n.s."

    def test_clear_improvement_detected(self):
        table = self._table([5] * 7, [1] * 7)
        marks = ev.significance_marks(table, {"sys": "base"}, alpha=0.01)
        assert marks[("sys", "train")] == "better"

    def test_clear_degradation_detected(self):
        table = self._table([1] * 7, [5] * 7)
        marks = ev.significance_marks(table, {"sys": "base"}, alpha=0.01)
        assert marks[("sys", "train")] == "worse"

    def test_alpha_zero_all_ns(self):
        table = self._table([5] * 7, [1] * 7)
        marks = ev.significance_marks(table, {"sys": "base"}, alpha=0.0)
        assert marks[("sys", "train")] == "n.s."

    def test_missing_baseline_mapping_rejected(self):
        table = self._table([3], [3], system="sysA", base="sysB")
        with pytest.raises(ValueError, match="no baseline"):
            ev.significance_marks(table, {})

    def test_baseline_marked(self):
        table = self._table([3, 3], [3, 3])
        marks = ev.significance_marks(table, {"sys": "base"})
        assert marks[("base", "train")] == "baseline"

    def test_report_formats(self):
        table = self._table([5] * 7, [1] * 7)
        marks = ev.significance_marks(table, {"sys": "base"})
        text = ev.format_mos_report(table, marks)
        assert "5.0+" in text
        assert "1.0B" in text


class TestRatingsCSV:
    def test_roundtrip(self, tmp_path):
        import csv
        path = tmp_path / "r.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(ev.RATINGS_HEADER)
            writer.writerow(["l1", "u1", "sys", "train", "4", "3",
                             "Scottish", "Irish"])
        loaded = ev.load_ratings_csv(path)
        assert loaded[0].mos == 4
        assert loaded[0].dialect_choice == "Scottish"

    def test_range_validation(self):
        with pytest.raises(ValueError):
            rating(mos=6)
        with pytest.raises(ValueError):
            rating(dmos=0)
