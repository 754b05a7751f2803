import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isospec.embedio import (
    EmbeddingFormatError,
    EmbeddingSpace,
    ZeroNormError,
    lang_id_from_path,
    length_normalize,
    load_embeddings,
    mean_center,
    preprocess,
)

from conftest import make_space, write_vec


class TestLoad:
    def test_prefix_truncation(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a", "b", "c"], [[1, 0], [0, 1], [1, 1]])
        space = load_embeddings(path, limit=2)
        assert space.n == 2 and space.d == 2
        assert space.vocab == ("a", "b")
        np.testing.assert_array_equal(space.matrix, [[1, 0], [0, 1]])
        assert space.flags == {"length_normalized": False, "mean_centered": False}

    def test_unbounded_limit_reads_everything(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a", "b", "c"], [[1, 0], [0, 1], [1, 1]])
        assert load_embeddings(path).n == 3

    def test_limit_larger_than_file(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a", "b"], [[1, 0], [0, 1]])
        assert load_embeddings(path, limit=200000).n == 2

    def test_field_count_error_names_line(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("2 2\na 1 2\nb 0.1\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError) as err:
            load_embeddings(path)
        assert err.value.line == 3
        assert ":3:" in str(err.value)

    @pytest.mark.parametrize("header", ["", "3", "three 2", "3 2 1", "0 2", "2 -1"])
    def test_bad_header(self, tmp_path, header):
        path = tmp_path / "bad.vec"
        path.write_text(header + "\na 1 2\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError) as err:
            load_embeddings(path)
        assert err.value.line == 1

    @pytest.mark.parametrize("value", ["nan", "inf", "-inf", "1e999", "abc"])
    def test_non_finite_or_garbled_value(self, tmp_path, value):
        path = tmp_path / "bad.vec"
        path.write_text(f"2 2\na 1 2\nb {value} 0\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError) as err:
            load_embeddings(path)
        assert err.value.line == 3

    def test_duplicates_keep_first(self, tmp_path, caplog):
        path = write_vec(tmp_path / "x.vec", ["a", "b", "a", "c"], [[1, 0], [0, 1], [9, 9], [1, 1]])
        space = load_embeddings(path)
        assert space.vocab == ("a", "b", "c")
        np.testing.assert_array_equal(space.matrix[0], [1, 0])
        assert space.duplicates_skipped == 1
        assert "duplicate" in caplog.text

    def test_duplicates_do_not_count_towards_limit(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a", "a", "b", "c"], [[1, 0], [2, 2], [0, 1], [1, 1]])
        assert load_embeddings(path, limit=2).vocab == ("a", "b")

    def test_expect_dim(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a", "b"], [[1, 0], [0, 1]])
        assert load_embeddings(path, expect_dim=2).d == 2
        with pytest.raises(EmbeddingFormatError, match="300"):
            load_embeddings(path, expect_dim=300)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "short.vec"
        path.write_text("3 2\na 1 2\nb 3 4\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError, match="ends after 2"):
            load_embeddings(path)
        assert load_embeddings(path, limit=2).n == 2

    def test_gzip(self, tmp_path):
        plain = write_vec(tmp_path / "x.vec", ["a", "b"], [[1, 0], [0.5, 2]])
        gz = tmp_path / "x.vec.gz"
        gz.write_bytes(gzip.compress(plain.read_bytes()))
        np.testing.assert_array_equal(load_embeddings(gz).matrix, load_embeddings(plain).matrix)
        assert load_embeddings(gz).lang_id == "x"

    def test_unicode_tokens_and_trailing_space(self, tmp_path):
        path = tmp_path / "u.vec"
        path.write_text("3 2\nétoile 1 2 \n北京 3 4\na　b 5 6\n", encoding="utf-8")
        space = load_embeddings(path)
        assert space.vocab == ("étoile", "北京", "a　b")
        np.testing.assert_array_equal(space.matrix, [[1, 2], [3, 4], [5, 6]])

    def test_tab_separated(self, tmp_path):
        path = tmp_path / "t.vec"
        path.write_text("1 2\na\t1\t2\n", encoding="utf-8")
        np.testing.assert_array_equal(load_embeddings(path).matrix, [[1, 2]])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_embeddings(tmp_path / "nope.vec")

    def test_float64_storage(self, tmp_path):
        path = write_vec(tmp_path / "x.vec", ["a"], [[0.1, 0.2]])
        assert load_embeddings(path).matrix.dtype == np.float64

    def test_lang_id(self):
        assert lang_id_from_path("/data/wiki.en.vec") == "wiki.en"
        assert lang_id_from_path("wiki.fi.vec.gz") == "wiki.fi"
        assert lang_id_from_path("de.txt") == "de"


class TestSpace:
    def test_immutable(self):
        space = make_space([[1.0, 2.0]])
        with pytest.raises(ValueError):
            space.matrix[0, 0] = 5
        with pytest.raises(AttributeError):
            space.lang_id = "yy"

    def test_writable_input_is_copied(self):
        source = np.eye(2)
        space = EmbeddingSpace("x", ("a", "b"), source)
        source[0, 0] = 9
        assert space.matrix[0, 0] == 1

    def test_frozen_input_is_adopted(self):
        source = np.eye(2)
        source.flags.writeable = False
        assert EmbeddingSpace("x", ("a", "b"), source).matrix is source

    def test_rejects_duplicates_and_shape(self):
        with pytest.raises(ValueError, match="duplicate"):
            EmbeddingSpace("x", ("a", "a"), np.eye(2))
        with pytest.raises(ValueError):
            EmbeddingSpace("x", ("a",), np.eye(2))
        with pytest.raises(ValueError):
            EmbeddingSpace("x", (), np.zeros((0, 2)))
        with pytest.raises(ValueError, match="non-finite"):
            EmbeddingSpace("x", ("a",), np.array([[np.nan, 1.0]]))


class TestLengthNormalize:
    def test_three_four_five(self):
        out = length_normalize(make_space([[3.0, 4.0]]))
        np.testing.assert_allclose(out.matrix, [[0.6, 0.8]], rtol=0, atol=1e-15)
        assert out.length_normalized and not out.mean_centered

    def test_idempotent_on_unit_rows(self):
        out = length_normalize(make_space([[1.0, 0.0]]))
        np.testing.assert_array_equal(out.matrix, [[1.0, 0.0]])

    def test_zero_row_names_token(self):
        space = EmbeddingSpace("x", ("ok", "</s>"), np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ZeroNormError) as err:
            length_normalize(space)
        assert err.value.token == "</s>"
        assert "</s>" in str(err.value)

    def test_unit_norms(self, rng):
        out = length_normalize(make_space(rng.standard_normal((200, 7)) * 50))
        norms = np.linalg.norm(out.matrix, axis=1)
        assert np.all(np.abs(norms - 1) <= 1e-9)


class TestMeanCenter:
    def test_mean_removal(self):
        out = mean_center(make_space([[1.0, 0.0], [3.0, 0.0]]))
        np.testing.assert_array_equal(out.matrix, [[-1.0, 0.0], [1.0, 0.0]])
        assert out.mean_centered

    def test_single_row_becomes_zero(self):
        np.testing.assert_array_equal(mean_center(make_space([[4.0, -2.0]])).matrix, [[0.0, 0.0]])

    def test_idempotent(self, rng):
        once = mean_center(make_space(rng.standard_normal((100, 5)) + 3))
        twice = mean_center(once)
        assert np.max(np.abs(twice.matrix - once.matrix)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(1, 8)),
                  elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_column_means_vanish(self, x):
        out = mean_center(make_space(x))
        assert np.max(np.abs(out.matrix.mean(axis=0))) <= 1e-9


class TestPipeline:
    def test_deterministic(self, tmp_path, rng):
        x = rng.standard_normal((50, 6))
        path = write_vec(tmp_path / "x.vec", [f"t{i}" for i in range(50)], x)
        a = preprocess(load_embeddings(path))
        b = preprocess(load_embeddings(path))
        assert a.matrix.tobytes() == b.matrix.tobytes()
        assert a.length_normalized and a.mean_centered

    def test_skip_steps(self, rng):
        space = make_space(rng.standard_normal((10, 3)))
        assert preprocess(space, normalize=False).flags == {"length_normalized": False, "mean_centered": True}
        assert preprocess(space, center=False).flags == {"length_normalized": True, "mean_centered": False}
