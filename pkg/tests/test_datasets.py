import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixbayes import datasets as ds
from mixbayes.errors import DataError, ValidationError
from mixbayes.model import Dataset


class TestBundled:
    def test_galaxy(self):
        g = ds.galaxy()
        assert g.n == 82
        assert g.values.min() == 9172 and g.values.max() == 34279

    def test_galaxy_scalings(self):
        raw = ds.galaxy().values
        assert np.allclose(ds.galaxy(1000).values, raw / 1000)
        z = ds.galaxy("standardize").values
        assert abs(z.mean()) < 1e-12
        assert z.std(ddof=1) == pytest.approx(1.0)
        assert np.array_equal(ds.galaxy("raw").values, raw)

    def test_stouffer_toby(self):
        st_ = ds.stouffer_toby()
        assert st_.values.shape == (216, 4)
        assert st_.values.sum(0).tolist() == [171, 108, 111, 67]

    def test_subset_is_reproducible(self):
        a = ds.stouffer_toby_subset(50, seed=3)
        assert a.n == 50
        assert a == ds.stouffer_toby_subset(50, seed=3)
        with pytest.raises(ValidationError):
            ds.stouffer_toby_subset(0)

    def test_unknown_bundled_name(self):
        with pytest.raises(DataError):
            ds.bundled_path("iris.csv")


class TestLoaders:
    def test_univariate_with_comments_and_crlf(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_bytes(b"# header\r\n1.5\r\n\r\n-2\r\n")
        assert ds.load_univariate(p).values.tolist() == [1.5, -2.0]

    def test_univariate_errors_report_line(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("1\nabc\n")
        with pytest.raises(DataError, match=":2:"):
            ds.load_univariate(p)
        p.write_text("1\nnan\n")
        with pytest.raises(DataError):
            ds.load_univariate(p)
        p.write_text("# only a comment\n")
        with pytest.raises(DataError, match="no observations"):
            ds.load_univariate(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ds.load_counts(tmp_path / "nope.txt")

    def test_counts_errors(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1\n-3\n")
        with pytest.raises(DataError, match="negative"):
            ds.load_counts(p)
        p.write_text("1\n2.5\n")
        with pytest.raises(DataError):
            ds.load_counts(p)

    def test_binary_matrix_with_header(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("A,B,C\n1,0,1\n0,0,1\n")
        d = ds.load_binary_matrix(p)
        assert d.values.tolist() == [[1, 0, 1], [0, 0, 1]]

    def test_binary_matrix_errors_report_line_and_column(self, tmp_path):
        p = tmp_path / "b.csv"
        p.write_text("1,0,1\n0,2,1\n")
        with pytest.raises(DataError, match=r":2:2"):
            ds.load_binary_matrix(p)
        p.write_text("1,0,1\n0,x,1\n")
        with pytest.raises(DataError, match=r":2:2"):
            ds.load_binary_matrix(p)
        p.write_text("1,0,1\n0,1\n")
        with pytest.raises(DataError, match="columns"):
            ds.load_binary_matrix(p)
        p.write_text("1,0,1\n")
        with pytest.raises(DataError):
            ds.load_binary_matrix(p, d=4)

    def test_multinomial_rows_allow_unequal_totals(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("2,0,1\n0,5,0\n")
        d = ds.load_multinomial_rows(p)
        assert d.totals.tolist() == [3, 5]

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValidationError):
            ds.load_dataset(tmp_path / "x", "images")

    @pytest.mark.parametrize("scale", [0, -2, "half"])
    def test_bad_scale(self, scale):
        with pytest.raises(ValidationError):
            ds.galaxy(scale)


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_univariate_round_trip(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("rt") / "x.txt"
    d = Dataset.real(values)
    ds.write_dataset(d, p)
    assert ds.load_univariate(p) == d


@settings(max_examples=30, deadline=None)
@given(rows=st.lists(st.lists(st.integers(0, 9), min_size=3, max_size=3), min_size=1, max_size=20))
def test_multinomial_round_trip(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("rt") / "m.csv"
    d = Dataset.multinomial(rows)
    ds.write_dataset(d, p)
    assert ds.load_dataset(p, "multinomial") == d


def test_counts_and_binary_round_trip(tmp_path):
    for d, kind in [(Dataset.counts([0, 3, 7]), "counts"), (Dataset.binary([[0, 1], [1, 1]]), "binary")]:
        p = tmp_path / f"{kind}.txt"
        ds.write_dataset(d, p)
        assert ds.load_dataset(p, kind) == d


def test_manifest(tmp_path):
    p = tmp_path / "x.txt"
    p.write_text("1\n2\n")
    d = ds.load_counts(p)
    m = ds.manifest_for(p, d)
    assert m.n == 2 and m.kind == "univariate-count"
    assert m.checksum == d.checksum()
    assert "data.file_sha256" in m.format()


class TestSimulators:
    def test_t_benchmark(self):
        data, z, truth = ds.simulate_t_benchmark(n=2000, seed=0)
        assert data.n == 2000
        assert abs(np.mean(z == 0) - 0.3) < 0.04
        assert truth.components[:, 2].tolist() == [5.0, 11.0]
        again, _, _ = ds.simulate_t_benchmark(n=2000, seed=0)
        assert again == data

    def test_multinomial_example(self):
        data, z, truth = ds.simulate_multinomial_example(n=50, total=20, seed=1)
        assert data.values.shape == (50, 4)
        assert np.all(data.totals == 20)
        assert truth.weights.tolist() == [0.5, 0.5]
