import logging

import numpy as np
import pytest

from phibp.count_matrix import CountMatrix, binomial_split, load_count_matrix, save_count_matrix
from phibp.exceptions import AlignmentError, CountMatrixParseError, DomainError
from phibp.rand_dist import RngHandle

CANONICAL = "group,asv_a,asv_b,asv_c\ngut,1,0,4\nsoil,0,2,7\n"


@pytest.fixture
def canonical_file(tmp_path):
    path = tmp_path / "counts.csv"
    path.write_text(CANONICAL)
    return path


def small_matrix():
    return CountMatrix(["g1", "g2"], ["s1", "s2", "s3"], [[1, 0, 3], [0, 2, 5]])


def test_load_small_matrix(tmp_path):
    path = tmp_path / "two.csv"
    path.write_text("group,x,y\na,1,0\nb,0,2\n")
    counts = load_count_matrix(path)

    assert counts.groups == ["a", "b"]
    assert counts.species == ["x", "y"]
    assert counts.values.tolist() == [[1, 0], [0, 2]]
    assert counts.samples.tolist() == [1, 1]
    assert counts.exposure.tolist() == [1.0, 1.0]


def test_load_drops_all_zero_columns(tmp_path, caplog):
    path = tmp_path / "zero.csv"
    path.write_text("group,x,y,z\na,1,0,0\nb,0,0,2\n")
    with caplog.at_level(logging.WARNING):
        counts = load_count_matrix(path)

    assert counts.species == ["x", "z"]
    assert "all-zero" in caplog.text


def test_load_tab_separated_and_integral_floats(tmp_path):
    path = tmp_path / "tabs.tsv"
    path.write_text("group\tx\ty\na\t3.0\t1\n")
    counts = load_count_matrix(path)
    assert counts.values.tolist() == [[3, 1]]


def test_save_load_is_byte_identical(canonical_file, tmp_path):
    out = tmp_path / "again.csv"
    save_count_matrix(load_count_matrix(canonical_file), out)
    assert out.read_bytes() == canonical_file.read_bytes()


@pytest.mark.parametrize(
    "text, row, column",
    [
        ("group,x,y\na,1,-2\n", 2, "y"),
        ("group,x,y\na,1,0.5\n", 2, "y"),
        ("group,x,y\na,1,abc\n", 2, "y"),
        ("group,x,y\na,1\n", 2, None),
        ("group\na\n", 1, None),
    ],
)
def test_parse_errors_carry_location(tmp_path, text, row, column):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(CountMatrixParseError) as info:
        load_count_matrix(path)
    assert info.value.row == row
    assert info.value.column == column


def test_sample_sidecar(canonical_file, tmp_path):
    sidecar = tmp_path / "samples.csv"
    sidecar.write_text("group,samples,exposure\nsoil,4,2.5\ngut,3,3\n")
    counts = load_count_matrix(canonical_file, sidecar)
    assert counts.samples.tolist() == [3, 4]
    assert counts.exposure.tolist() == [3.0, 2.5]

    sidecar.write_text("group,samples\ngut,3\n")
    with pytest.raises(CountMatrixParseError):
        load_count_matrix(canonical_file, sidecar)


def test_count_matrix_validation():
    with pytest.raises(DomainError):
        CountMatrix(["a"], ["x"], [[-1]])
    with pytest.raises(DomainError):
        CountMatrix(["a"], ["x", "x"], [[1, 2]])
    with pytest.raises(DomainError):
        CountMatrix(["a", "b"], ["x"], [[1]])
    kept = CountMatrix(["a"], ["x", "y"], [[0, 1]], drop_empty=False)
    assert kept.n_species == 2


def test_align_existing_and_novel():
    train = small_matrix()
    test = CountMatrix(["g1", "g2"], ["s3", "new", "s1"], [[1, 2, 0], [0, 4, 1]])
    existing, novel, labels = train.align(test)

    assert existing.tolist() == [[0, 0, 1], [1, 0, 0]]
    assert novel.tolist() == [[2], [4]]
    assert labels == ["new"]

    with pytest.raises(AlignmentError):
        train.align(CountMatrix(["g2", "g1"], ["s1"], [[1], [1]]))


def test_binomial_split_conserves_cells():
    counts = small_matrix()
    train, test = binomial_split(RngHandle(3), counts, [2, 1], [1, 3])

    aligned, novel, _ = counts.align(test)
    train_aligned, _, _ = counts.align(train)
    assert np.array_equal(train_aligned + aligned, counts.values)
    assert novel.size == 0
    for side in (train, test):
        assert np.all(side.values.sum(axis=0) > 0)
        assert set(side.species) <= set(counts.species)
    assert set(train.species) | set(test.species) == set(counts.species)
    assert train.samples.tolist() == [2, 1]
    assert test.samples.tolist() == [1, 3]


def test_binomial_split_marginal_mean():
    counts = CountMatrix(["g"], ["s"], [[10]])
    rng = RngHandle(4)
    draws = []
    for i in range(10_000):
        train, _ = binomial_split(rng.child(i), counts, 1, 1)
        draws.append(train.values.sum())
    draws = np.array(draws)
    assert abs(draws.mean() - 5.0) < 4 * np.sqrt(2.5 / len(draws))


def test_binomial_split_requires_positive_samples():
    with pytest.raises(DomainError):
        binomial_split(RngHandle(0), small_matrix(), 1, 0)
