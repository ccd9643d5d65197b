import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qblif.data import (EVENT_DTYPE, bin_events, encode_direct, encode_frames, events_dataset,
                        generate_synthetic, load_idx_images, load_labels, make_events, read_events,
                        read_idx, train_test_split, write_events, write_idx)
from qblif.exceptions import FormatError


class TestSynthetic:
    @pytest.mark.parametrize("task", ["gaussians", "temporal-xor"])
    def test_seeded(self, task):
        a = generate_synthetic(task, 50, seed=3)
        b = generate_synthetic(task, 50, seed=3)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            generate_synthetic("spirals", 10)

    def test_gaussians_linearly_separable(self):
        ds = generate_synthetic("gaussians", 2000, seed=0)
        centres = np.stack([ds.features[ds.labels == k].mean(axis=0) for k in range(4)])
        # nearest centroid is a linear rule: argmax(c.x - |c|^2 / 2)
        scores = ds.features @ centres.T - 0.5 * (centres ** 2).sum(axis=1)
        assert np.mean(scores.argmax(axis=1) == ds.labels) == 1.0

    def test_temporal_xor_single_step_is_degenerate(self):
        ds = generate_synthetic("temporal-xor", 400, seed=1, noise=0.0)
        summed = encode_frames(ds.features, 1)[0]
        rows = {c: {tuple(r) for r in summed[ds.labels == c]} for c in (0, 1)}
        assert rows[0] == rows[1]
        two_step = encode_frames(ds.features, 2)
        pairs = {c: {tuple(r.ravel()) for r in two_step[:, ds.labels == c].transpose(1, 0, 2)}
                 for c in (0, 1)}
        assert not pairs[0] & pairs[1]

    def test_split(self):
        ds = generate_synthetic("gaussians", 100, seed=0)
        tr, te = train_test_split(ds, 0.25)
        assert len(tr) == 75 and len(te) == 25 and te.split == "test"


class TestEncoders:
    def test_direct(self):
        x = np.arange(6.0).reshape(2, 3)
        enc = encode_direct(x, 4)
        assert enc.shape == (4, 2, 3)
        np.testing.assert_array_equal(encode_direct(x, 1)[0], x)
        np.testing.assert_array_equal(enc.sum(axis=0), 4 * x)

    def test_bad_T(self):
        with pytest.raises(ValueError):
            encode_direct(np.zeros(3), 0)

    def test_frames_rebin(self):
        x = np.arange(8.0).reshape(1, 4, 2)
        out = encode_frames(x, 2)
        np.testing.assert_array_equal(out[:, 0], [[2.0, 4.0], [10.0, 12.0]])


class TestIdx:
    def _fixture(self, path):
        pixels = np.array([[[0, 255], [128, 1]], [[255, 255], [0, 0]]], dtype=np.uint8)
        header = struct.pack(">HBB", 0, 0x08, 3) + struct.pack(">3I", 2, 2, 2)
        path.write_bytes(header + pixels.tobytes())
        return pixels

    def test_images(self, tmp_path):
        self._fixture(tmp_path / "img.idx")
        ds = load_idx_images(tmp_path / "img.idx")
        assert ds.features.shape == (2, 2, 2)
        assert ds.features[0, 0, 1] == 1.0 and ds.features.min() == 0.0

    def test_wrong_magic(self, tmp_path):
        (tmp_path / "bad.idx").write_bytes(b"\x01\x02\x08\x01" + b"\x00" * 8)
        with pytest.raises(FormatError):
            read_idx(tmp_path / "bad.idx")

    def test_truncated(self, tmp_path):
        self._fixture(tmp_path / "img.idx")
        blob = (tmp_path / "img.idx").read_bytes()
        (tmp_path / "img.idx").write_bytes(blob[:-1])
        with pytest.raises(FormatError):
            read_idx(tmp_path / "img.idx")

    def test_round_trip(self, tmp_path):
        arr = np.arange(24, dtype=np.int32).reshape(2, 3, 4)
        write_idx(tmp_path / "a.idx", arr)
        np.testing.assert_array_equal(read_idx(tmp_path / "a.idx"), arr)

    def test_labels(self, tmp_path):
        (tmp_path / "l.csv").write_text("id,label\n0,3\n1,1\n")
        assert load_labels(tmp_path / "l.csv").tolist() == [3, 1]
        write_idx(tmp_path / "l.idx", np.array([4, 2], dtype=np.uint8))
        assert load_labels(tmp_path / "l.idx").tolist() == [4, 2]


class TestEvents:
    def test_record_size(self):
        assert EVENT_DTYPE.itemsize == 13

    def test_first_frame(self):
        ev = make_events([0], [1], [0], [1])
        frames = bin_events(ev, 2, (2, 2), t_start=0, duration=100)
        assert frames[0, 1, 0, 1] == 1 and frames.sum() == 1

    def test_single_frame_is_count_map(self, rng):
        n = 200
        ev = make_events(np.sort(rng.integers(0, 1000, n)), rng.integers(0, 4, n),
                         rng.integers(0, 3, n), rng.integers(0, 2, n))
        frames = bin_events(ev, 1, (3, 4))
        tally = np.zeros((2, 3, 4))
        for e in ev:
            tally[int(e["p"] > 0), e["y"], e["x"]] += 1
        np.testing.assert_array_equal(frames[0], tally)

    def test_uniform_events_spread_evenly(self):
        ev = make_events(np.arange(1000), np.zeros(1000), np.zeros(1000), np.ones(1000))
        sums = bin_events(ev, 4, (1, 1)).sum(axis=(1, 2, 3))
        assert sums.tolist() == [250, 250, 250, 250]

    def test_empty(self):
        with pytest.raises(ValueError):
            bin_events(make_events([], [], [], []), 2, (2, 2))

    @given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 3), st.integers(0, 3),
                              st.integers(0, 1)), min_size=1, max_size=100), st.integers(1, 8))
    def test_conserves_events(self, records, T):
        t, x, y, p = zip(*records)
        assert bin_events(make_events(t, x, y, p), T, (4, 4)).sum() == len(records)

    def test_file_round_trip(self, tmp_path):
        ev = make_events([5, 9], [1, 2], [3, 0], [0, 1])
        write_events(tmp_path / "e.bin", ev)
        assert (tmp_path / "e.bin").stat().st_size == 26
        np.testing.assert_array_equal(read_events(tmp_path / "e.bin"), ev)
        (tmp_path / "e.bin").write_bytes(b"\x00" * 14)
        with pytest.raises(FormatError):
            read_events(tmp_path / "e.bin")

    def test_dataset(self):
        ev = make_events([0, 10], [0, 1], [0, 1], [1, 0])
        ds = events_dataset([ev, ev], [0, 1], 2, (2, 2))
        assert ds.features.shape == (2, 2, 2, 2, 2) and ds.framed
