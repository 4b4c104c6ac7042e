import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchassoc.distribution import make_random_partition, sample_dataset
from patchassoc.io import (
    export_heatmap,
    gap_threshold,
    load_dataset,
    load_params,
    load_partition,
    read_csv,
    read_pgm,
    reconstruct_heatmap,
    save_dataset,
    save_params,
    save_partition,
    write_csv,
    write_json,
    write_matrix_csv,
)
from patchassoc.model import ModelParams
from patchassoc.rng import stream


def assert_same_dataset(a, b):
    np.testing.assert_array_equal(a.patches, b.patches)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.signal_set, b.signal_set)
    np.testing.assert_array_equal(a.delta, b.delta)
    np.testing.assert_array_equal(a.partition.membership, b.partition.membership)
    np.testing.assert_array_equal(a.spec.w_star, b.spec.w_star)
    assert (a.spec.d, a.spec.D, a.spec.C, a.spec.L) == (b.spec.d, b.spec.D, b.spec.C, b.spec.L)
    assert (a.spec.q, a.spec.sigma2, a.spec.threshold_frac) == (b.spec.q, b.spec.sigma2, b.spec.threshold_frac)
    assert a.seed == b.seed


class TestParams:
    def test_round_trip_exact(self, tmp_path):
        r = np.random.default_rng(0)
        A = r.standard_normal((5, 5)) * 1e-3
        np.fill_diagonal(A, 0.1 / 3)
        p = ModelParams(A=A, v=r.standard_normal(4) / 7, p=5, nu=0.01, tau=2e-4, sigma_A=0.1 / 3)
        save_params(p, tmp_path / "p.txt")
        q = load_params(tmp_path / "p.txt")
        np.testing.assert_array_equal(p.A, q.A)
        np.testing.assert_array_equal(p.v, q.v)
        assert (q.p, q.nu, q.tau, q.sigma_A) == (5, 0.01, 2e-4, 0.1 / 3)

    def test_truncated(self, tmp_path):
        p = ModelParams(A=np.eye(3), v=np.ones(2), p=3, nu=0.0, tau=1.0, sigma_A=1.0)
        save_params(p, tmp_path / "p.txt")
        text = (tmp_path / "p.txt").read_text().rsplit("\n", 2)[0]
        (tmp_path / "p.txt").write_text(text)
        with pytest.raises(ValueError, match="expected"):
            load_params(tmp_path / "p.txt")


class TestDataset:
    @pytest.mark.parametrize("suffix", ["txt", "npz"])
    def test_round_trip(self, tmp_path, small_spec, small_partition, suffix):
        ds = sample_dataset(small_spec, small_partition, 7, 42)
        save_dataset(ds, tmp_path / f"ds.{suffix}")
        assert_same_dataset(ds, load_dataset(tmp_path / f"ds.{suffix}"))

    def test_empty(self, tmp_path, small_spec, small_partition):
        ds = sample_dataset(small_spec, small_partition, 0, 1)
        save_dataset(ds, tmp_path / "ds.txt")
        assert len(load_dataset(tmp_path / "ds.txt")) == 0

    def test_random_partition(self, tmp_path, small_spec):
        part = make_random_partition(16, 4, stream(2))
        ds = sample_dataset(small_spec, part, 3, 5)
        save_dataset(ds, tmp_path / "ds.txt")
        assert_same_dataset(ds, load_dataset(tmp_path / "ds.txt"))

    def test_partition_file(self, tmp_path, small_partition):
        save_partition(small_partition, tmp_path / "part.txt")
        np.testing.assert_array_equal(load_partition(tmp_path / "part.txt").membership, small_partition.membership)


class TestCsvJson:
    def test_rfc4180(self, tmp_path):
        write_csv(tmp_path / "m.csv", ["a", "b", "c"], [[1, 0.1, "x,y"], [np.int64(2), np.float64(1e-300), True]])
        raw = (tmp_path / "m.csv").read_bytes()
        assert raw.count(b"\r\n") == 3
        with open(tmp_path / "m.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [["a", "b", "c"], ["1", "0.10000000000000001", "x,y"], ["2", "1e-300", "true"]]
        assert float(rows[1][1]) == 0.1

    def test_read_back(self, tmp_path):
        write_csv(tmp_path / "m.csv", ["k"], [[3]])
        assert read_csv(tmp_path / "m.csv") == (["k"], [["3"]])

    def test_matrix(self, tmp_path):
        M = np.arange(6.0).reshape(2, 3) / 3
        write_matrix_csv(tmp_path / "a.csv", M)
        _, rows = read_csv(tmp_path / "a.csv")
        header, _ = read_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(np.array([header] + rows, dtype=float), M)

    def test_json_nan(self, tmp_path):
        write_json(tmp_path / "x.json", {"b": float("nan"), "a": np.arange(2), "c": np.float32(0.5)})
        assert json.loads((tmp_path / "x.json").read_text()) == {"a": [0, 1], "b": None, "c": 0.5}


class TestHeatmap:
    def test_single_pixel(self, tmp_path):
        side = export_heatmap(np.array([[0.0]]), tmp_path / "h.pgm")
        np.testing.assert_array_equal(read_pgm(tmp_path / "h.pgm"), [[0]])
        assert "note" in side

    def test_two_by_two(self, tmp_path):
        export_heatmap(np.array([[0.0, 1.0], [1.0, 0.0]]), tmp_path / "h.pgm")
        assert (tmp_path / "h.pgm").read_text() == "P2\n2 2\n255\n0 255\n255 0\n"

    def test_row_major_shape(self, tmp_path):
        export_heatmap(np.arange(6.0).reshape(2, 3), tmp_path / "h.pgm")
        np.testing.assert_array_equal(read_pgm(tmp_path / "h.pgm"), [[0, 51, 102], [153, 204, 255]])

    def test_constant(self, tmp_path):
        side = export_heatmap(np.full((3, 2), 4.5), tmp_path / "h.pgm")
        assert not read_pgm(tmp_path / "h.pgm").any()
        assert json.loads((tmp_path / "h.pgm.json").read_text())["note"] == side["note"]
        np.testing.assert_array_equal(reconstruct_heatmap(tmp_path / "h.pgm"), 4.5)

    @pytest.mark.parametrize("bad", [np.zeros(3), np.array([[np.nan, 1.0]])])
    def test_rejects(self, tmp_path, bad):
        with pytest.raises(ValueError):
            export_heatmap(bad, tmp_path / "h.pgm")

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, allow_nan=False)))
    def test_reconstruction(self, tmp_path_factory, M):
        path = tmp_path_factory.mktemp("h") / "h.pgm"
        export_heatmap(M, path)
        span = M.max() - M.min()
        assert np.max(np.abs(reconstruct_heatmap(path) - M)) <= span / 255 + 1e-9 * max(1.0, np.abs(M).max())

    def test_pgm_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_text("P2\n# made by hand\n2 1\n255\n7 9\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[7, 9]])


class TestGapThreshold:
    def test_bimodal(self):
        pix = np.array([10] * 50 + [12] * 30 + [200] * 20 + [220] * 5)
        assert gap_threshold(pix) == 12

    def test_sparse_low_member_of_high_class(self):
        # a variance split would cut at 85; the gap split keeps it high
        pix = np.concatenate([np.repeat(np.arange(0, 35), 230), [85], np.repeat(np.arange(89, 256), 8)])
        t = gap_threshold(pix)
        assert 34 <= t < 85

    def test_constant(self):
        assert not np.any(np.full(5, 7) > gap_threshold(np.full(5, 7)))

    def test_binary_mask(self):
        mask = np.eye(4, dtype=bool)
        pix = np.where(mask, 255, 0)
        np.testing.assert_array_equal(pix > gap_threshold(pix), mask)
