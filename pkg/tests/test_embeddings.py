import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenelay.embeddings import EmbeddingTable, cosine, load_table, lookup


@pytest.fixture
def write(tmp_path):
    def _write(text, name="vec.txt"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    return _write


def test_load_normalizes(write):
    table = load_table(write("cat 3.0 4.0\n"), dim=2)
    np.testing.assert_allclose(lookup(table, "cat"), [0.6, 0.8])


def test_duplicate_first_wins(write):
    table = load_table(write("a 1 0\na 0 1\n"), dim=2)
    np.testing.assert_array_equal(lookup(table, "a"), [1.0, 0.0])
    assert table.stats.duplicates == 1


def test_case_folded_duplicate(write):
    table = load_table(write("Cat 1 0\ncat 0 1\n"), dim=2)
    np.testing.assert_array_equal(lookup(table, "cat"), [1.0, 0.0])
    assert table.stats.duplicates == 1
    assert list(table.index) == ["cat"]


def test_bad_arity_and_zero_norm_counted(write):
    table = load_table(write("a 1 0\nb 1\nc 1 2 3\nz 0 0\nd x y\n"), dim=2)
    assert len(table) == 1
    assert table.stats.bad_arity == 3
    assert table.stats.zero_norm == 1


def test_no_parseable_lines_is_fatal(write):
    with pytest.raises(ValueError):
        load_table(write("a 1 2 3\n"), dim=2)


def test_unreadable_file_is_fatal(tmp_path):
    with pytest.raises(OSError):
        load_table(tmp_path / "missing.txt", dim=2)


def test_lookup_lowercases_and_signals_oov(write):
    table = load_table(write("cat 3 4\n"), dim=2)
    np.testing.assert_allclose(lookup(table, "Cat"), [0.6, 0.8])
    assert lookup(table, "zxqv") is None


def test_cosine_examples():
    v = np.array([0.6, 0.8])
    assert cosine(v, v) == pytest.approx(1.0)
    assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert cosine([0.6, 0.8], [0.8, 0.6]) == pytest.approx(0.96, abs=1e-15)


def test_cosine_length_mismatch():
    with pytest.raises(ValueError):
        cosine([1.0, 0.0], [1.0, 0.0, 0.0])


unit = arrays(np.float64, 7, elements=st.floats(-10, 10)).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
    lambda v: v / np.linalg.norm(v)
)


@settings(max_examples=200)
@given(unit, unit)
def test_cosine_symmetric_and_bounded(a, b):
    assert cosine(a, b) == cosine(b, a)
    assert -1.0 <= cosine(a, b) <= 1.0


@settings(max_examples=50)
@given(st.dictionaries(st.text("abcdef", min_size=1, max_size=4), arrays(np.float64, 5, elements=st.floats(-5, 5)), min_size=1))
def test_from_dict_norm_invariant(entries):
    entries = {k: v for k, v in entries.items() if np.linalg.norm(v) > 1e-6}
    if not entries:
        return
    table = EmbeddingTable.from_dict(entries, dim=5)
    norms = np.linalg.norm(table.vectors, axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-6)
    assert all(k == k.lower() for k in table.index)
