"""Pooling analysis: improvement matrices, partner-quality correlation,
pool selection, the Welch test, and the table file format."""

import numpy as np
import pytest

from b2t.errors import LatticeFormatError
from b2t.pooling import (
    AccuracyTable,
    improvement_matrix,
    load_table_file,
    quality_correlation,
    save_table_file,
    select_pool,
    welch_t_test,
)

from _oracles import pearson_oracle


def four_dataset_table() -> AccuracyTable:
    """Standalone ordering LibriBrain > Armeni > Gwilliams > Broderick."""
    return AccuracyTable(
        datasets=("LibriBrain", "Armeni", "Gwilliams", "Broderick"),
        standalone=(0.88, 0.74, 0.62, 0.55),
        joint=(
            (0.88, 0.90, 0.89, 0.87),
            (0.80, 0.74, 0.76, 0.73),
            (0.70, 0.67, 0.62, 0.63),
            (0.62, 0.60, 0.58, 0.55),
        ),
        chance=(0.02, 0.02, 0.02, 0.02),
    )


def linear_conferral_table(slope: float) -> AccuracyTable:
    """joint[i][j] = standalone[i] + slope * standalone[j], so the mean
    improvement each dataset confers is exactly linear in its standalone
    accuracy."""
    standalone = (0.9, 0.7, 0.5, 0.3)
    names = ("a", "b", "c", "d")
    joint = tuple(
        tuple(
            standalone[i] if i == j else standalone[i] + slope * standalone[j]
            for j in range(4)
        )
        for i in range(4)
    )
    return AccuracyTable(
        datasets=names, standalone=standalone, joint=joint, chance=(0.1,) * 4
    )


class TestAccuracyTable:
    def test_validation(self):
        with pytest.raises(ValueError, match="two datasets"):
            AccuracyTable(("only",), (0.5,), ((0.5,),), (0.1,))
        with pytest.raises(ValueError, match="unique"):
            AccuracyTable(
                ("x", "x"), (0.5, 0.5), ((0.5, 0.5), (0.5, 0.5)), (0.1, 0.1)
            )
        with pytest.raises(ValueError, match="every dataset"):
            AccuracyTable(("x", "y"), (0.5,), ((0.5, 0.5), (0.5, 0.5)), (0.1, 0.1))
        with pytest.raises(ValueError, match="2x2"):
            AccuracyTable(("x", "y"), (0.5, 0.5), ((0.5, 0.5),), (0.1, 0.1))
        with pytest.raises(ValueError, match="2x2"):
            AccuracyTable(("x", "y"), (0.5, 0.5), ((0.5,), (0.5, 0.5)), (0.1, 0.1))

    def test_index_of(self):
        table = four_dataset_table()
        assert table.index_of("Gwilliams") == 2
        with pytest.raises(KeyError, match="unknown dataset"):
            table.index_of("missing")


class TestImprovementMatrix:
    def test_hand_case(self):
        table = AccuracyTable(
            datasets=("x", "y", "z"),
            standalone=(0.5, 0.4, 0.3),
            joint=((0.5, 0.7, 0.6), (0.45, 0.4, 0.5), (0.2, 0.35, 0.3)),
            chance=(0.1, 0.1, 0.1),
        )
        delta = improvement_matrix(table)
        expected = np.array(
            [
                [0.0, 0.2, 0.1],
                [0.05, 0.0, 0.1],
                [-0.1, 0.05, 0.0],
            ]
        )
        np.testing.assert_allclose(delta, expected, atol=1e-15)

    def test_diagonal_is_zero_even_when_joint_differs(self):
        table = AccuracyTable(
            datasets=("x", "y"),
            standalone=(0.5, 0.4),
            joint=((0.9, 0.6), (0.3, 0.9)),
            chance=(0.1, 0.1),
        )
        delta = improvement_matrix(table)
        assert delta[0, 0] == 0.0
        assert delta[1, 1] == 0.0


class TestQualityCorrelation:
    def test_conferred_matches_pearson_oracle(self):
        table = four_dataset_table()
        delta = improvement_matrix(table)
        n = len(table.datasets)
        conferred = []
        for j in range(n):
            values = [delta[i][j] for i in range(n) if i != j]
            conferred.append(sum(values) / len(values))
        expected_r = pearson_oracle(list(table.standalone), conferred)
        r, p = quality_correlation(table, direction="conferred")
        assert r == pytest.approx(expected_r, abs=1e-12)
        assert 0.0 <= p <= 1.0

    def test_received_matches_pearson_oracle(self):
        table = four_dataset_table()
        delta = improvement_matrix(table)
        n = len(table.datasets)
        received = []
        for i in range(n):
            values = [delta[i][j] for j in range(n) if j != i]
            received.append(sum(values) / len(values))
        expected_r = pearson_oracle(list(table.standalone), received)
        r, _ = quality_correlation(table, direction="received")
        assert r == pytest.approx(expected_r, abs=1e-12)

    def test_perfectly_linear_conferral(self):
        r, p = quality_correlation(linear_conferral_table(0.25))
        assert r == pytest.approx(1.0, abs=1e-9)
        assert p == pytest.approx(0.0, abs=1e-6)

    def test_negative_slope_flips_sign(self):
        r, _ = quality_correlation(linear_conferral_table(-0.25))
        assert r == pytest.approx(-1.0, abs=1e-9)

    def test_direction_validation(self):
        with pytest.raises(ValueError, match="direction"):
            quality_correlation(four_dataset_table(), direction="sideways")

    def test_needs_three_datasets(self):
        table = AccuracyTable(
            ("x", "y"), (0.5, 0.4), ((0.5, 0.6), (0.5, 0.4)), (0.1, 0.1)
        )
        with pytest.raises(ValueError, match="three"):
            quality_correlation(table)

    def test_constant_standalone_rejected(self):
        table = AccuracyTable(
            datasets=("x", "y", "z"),
            standalone=(0.5, 0.5, 0.5),
            joint=((0.5, 0.6, 0.7), (0.4, 0.5, 0.6), (0.3, 0.4, 0.5)),
            chance=(0.1, 0.1, 0.1),
        )
        with pytest.raises(ValueError, match="constant"):
            quality_correlation(table)


class TestSelectPool:
    def test_best_partners_by_standalone(self):
        table = four_dataset_table()
        assert select_pool(table, "Gwilliams", 2) == ["LibriBrain", "Armeni"]

    def test_target_is_excluded_even_when_best(self):
        table = four_dataset_table()
        assert select_pool(table, "LibriBrain", 2) == ["Armeni", "Gwilliams"]

    def test_k_zero_and_full(self):
        table = four_dataset_table()
        assert select_pool(table, "Broderick", 0) == []
        assert select_pool(table, "Broderick", 3) == [
            "LibriBrain",
            "Armeni",
            "Gwilliams",
        ]

    def test_ties_break_alphabetically(self):
        table = AccuracyTable(
            datasets=("zeta", "alpha", "mid", "target"),
            standalone=(0.6, 0.6, 0.5, 0.4),
            joint=tuple((0.5,) * 4 for _ in range(4)),
            chance=(0.1,) * 4,
        )
        assert select_pool(table, "target", 2) == ["alpha", "zeta"]

    def test_validation(self):
        table = four_dataset_table()
        with pytest.raises(ValueError, match="k must be"):
            select_pool(table, "Armeni", -1)
        with pytest.raises(ValueError, match="cannot select"):
            select_pool(table, "Armeni", 4)
        with pytest.raises(KeyError, match="unknown dataset"):
            select_pool(table, "nope", 1)


class TestWelch:
    def test_identical_samples(self):
        t, p = welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert t == pytest.approx(0.0, abs=1e-12)
        assert p == pytest.approx(1.0, abs=1e-12)

    def test_separated_samples(self):
        t, p = welch_t_test([5.0, 5.1, 4.9, 5.2], [1.0, 1.1, 0.9, 1.2])
        assert t > 10
        assert p < 1e-4

    def test_sign_follows_order(self):
        t_ab, _ = welch_t_test([3.0, 3.1, 2.9], [1.0, 1.1, 0.9])
        t_ba, _ = welch_t_test([1.0, 1.1, 0.9], [3.0, 3.1, 2.9])
        assert t_ab > 0 > t_ba
        assert t_ab == pytest.approx(-t_ba, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="two observations"):
            welch_t_test([1.0], [1.0, 2.0])
        with pytest.raises(ValueError, match="two observations"):
            welch_t_test([1.0, 2.0], [3.0])


class TestTableFiles:
    def test_round_trip(self, tmp_path):
        table = four_dataset_table()
        path = tmp_path / "table.txt"
        save_table_file(table, path)
        loaded = load_table_file(path)
        assert loaded.datasets == table.datasets
        np.testing.assert_allclose(loaded.standalone, table.standalone, atol=1e-6)
        np.testing.assert_allclose(loaded.chance, table.chance, atol=1e-6)
        for i in range(4):
            for j in range(4):
                if i == j:
                    # '-' on the diagonal reads back as the standalone value
                    assert loaded.joint[i][j] == pytest.approx(
                        table.standalone[i], abs=1e-6
                    )
                else:
                    assert loaded.joint[i][j] == pytest.approx(
                        table.joint[i][j], abs=1e-6
                    )

    def test_file_layout(self, tmp_path):
        path = tmp_path / "table.txt"
        save_table_file(four_dataset_table(), path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0].startswith("datasets LibriBrain Armeni")
        assert lines[1].startswith("standalone ")
        assert lines[2].startswith("joint LibriBrain ")
        assert lines[2].split()[2] == "-"
        assert lines[-1].startswith("chance ")

    def test_blank_lines_tolerated(self, tmp_path):
        path = tmp_path / "table.txt"
        save_table_file(four_dataset_table(), path)
        padded = tmp_path / "padded.txt"
        padded.write_text(
            "\n" + path.read_text(encoding="utf-8").replace("\n", "\n\n"),
            encoding="utf-8",
        )
        assert load_table_file(padded).datasets == four_dataset_table().datasets

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(LatticeFormatError, match="empty"):
            load_table_file(path)

    def test_bad_first_row(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("standalone 0.5 0.4\n", encoding="utf-8")
        with pytest.raises(LatticeFormatError, match="datasets"):
            load_table_file(path)

    def test_wrong_value_count_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\nstandalone 0.5\n", encoding="utf-8"
        )
        with pytest.raises(LatticeFormatError, match="expected 2") as excinfo:
            load_table_file(path)
        assert excinfo.value.line_number == 2

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("datasets x y\nstandalone 0.5 oops\n", encoding="utf-8")
        with pytest.raises(LatticeFormatError, match="non-numeric"):
            load_table_file(path)

    def test_unknown_joint_dataset(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\nstandalone 0.5 0.4\njoint zzz 0.1 0.2\n",
            encoding="utf-8",
        )
        with pytest.raises(LatticeFormatError, match="unknown dataset"):
            load_table_file(path)

    def test_duplicate_joint_row(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\nstandalone 0.5 0.4\n"
            "joint x - 0.2\njoint x - 0.3\njoint y 0.1 -\n",
            encoding="utf-8",
        )
        with pytest.raises(LatticeFormatError, match="duplicate"):
            load_table_file(path)

    def test_joint_before_standalone(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\njoint x - 0.2\n", encoding="utf-8"
        )
        with pytest.raises(LatticeFormatError, match="after the standalone"):
            load_table_file(path)

    def test_dash_off_diagonal(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\nstandalone 0.5 0.4\njoint x - -\n",
            encoding="utf-8",
        )
        with pytest.raises(LatticeFormatError, match="diagonal"):
            load_table_file(path)

    def test_unknown_row_kind(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(
            "datasets x y\nstandalone 0.5 0.4\nbogus 1 2\n", encoding="utf-8"
        )
        with pytest.raises(LatticeFormatError, match="row kind"):
            load_table_file(path)

    def test_missing_rows(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("datasets x y\nstandalone 0.5 0.4\n", encoding="utf-8")
        with pytest.raises(LatticeFormatError, match="chance"):
            load_table_file(path)
        path.write_text(
            "datasets x y\nstandalone 0.5 0.4\nchance 0.1 0.1\njoint x - 0.2\n",
            encoding="utf-8",
        )
        with pytest.raises(LatticeFormatError, match="missing joint"):
            load_table_file(path)
