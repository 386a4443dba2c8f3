import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gembhash import hashing
from gembhash.errors import DataError, FormatError, ShapeError
from gembhash.hashing import BinaryCodes, ItqModel
from oracles import all_corners, naive_hamming


def _orth_err(r):
    return np.abs(r.T @ r - np.eye(r.shape[1])).max()


class TestItq:
    def test_corners_fixed_point(self):
        # V already at the hypercube corners: with R = I the first
        # iteration lands on B = V and the loss is zero
        v = all_corners(6)
        rotation, losses = hashing.itq_rotation(v, np.eye(6), 3)
        assert losses[0] == pytest.approx(0.0, abs=1e-20)
        assert _orth_err(rotation) < 1e-12

    def test_corners_random_start_never_increases(self):
        v = all_corners(5)
        model = hashing.fit_itq(v, 5, n_iters=20, seed=0)
        assert np.all(np.diff(model.loss_history) <= 1e-9)

    def test_zero_iterations_orthogonal(self, rng):
        model = hashing.fit_itq(rng.standard_normal((100, 12)), 8, n_iters=0, seed=5)
        assert model.loss_history == ()
        assert _orth_err(model.rotation) < 1e-8
        assert _orth_err(model.pca_projection) < 1e-8

    def test_loss_non_increasing_and_orthogonal(self, rng):
        x = rng.standard_normal((1000, 24))
        seen = []
        model = hashing.fit_itq(x, 16, n_iters=50, seed=2,
                                callback=lambda i, r, loss: seen.append((i, _orth_err(r), loss)))
        assert [s[0] for s in seen] == list(range(1, 51))
        assert max(s[1] for s in seen) < 1e-8
        losses = np.array(model.loss_history)
        assert np.all(np.diff(losses) <= 1e-9 * losses[0])

    def test_seeded(self, rng):
        x = rng.standard_normal((200, 8))
        a = hashing.fit_itq(x, 8, seed=4)
        b = hashing.fit_itq(x, 8, seed=4)
        np.testing.assert_array_equal(a.rotation, b.rotation)

    def test_preconditions(self, rng):
        with pytest.raises(DataError):
            hashing.fit_itq(rng.standard_normal((100, 4)), 8)
        with pytest.raises(DataError):
            hashing.fit_itq(rng.standard_normal((4, 10)), 8)


class TestEncode:
    def test_mean_gives_all_ones(self, rng):
        x = rng.standard_normal((300, 10)) + 2.0
        for model in (hashing.fit_itq(x, 8), hashing.fit_lsh(x, 8)):
            codes = hashing.encode(model, model.mean[None, :])
            assert codes.to_bits().all()

    def test_negation_flips(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        model = ItqModel(np.zeros(6), np.eye(6), q)
        x = rng.standard_normal((40, 6))
        a = hashing.encode(model, x).to_bits()
        b = hashing.encode(model, -x).to_bits()
        np.testing.assert_array_equal(a, ~b)

    def test_deterministic(self, rng):
        x = rng.standard_normal((50, 9))
        model = hashing.fit_lsh(x, 20, seed=1)
        np.testing.assert_array_equal(hashing.encode(model, x).words, hashing.encode(model, x).words)
        other = hashing.fit_lsh(x, 20, seed=2)
        assert not np.array_equal(model.hyperplanes, other.hyperplanes)

    def test_shape_error(self, rng):
        model = hashing.fit_lsh(rng.standard_normal((10, 4)), 4)
        with pytest.raises(ShapeError):
            hashing.encode(model, np.zeros((2, 5)))


class TestHamming:
    def test_examples(self):
        a = BinaryCodes.from_bits([[0, 1, 0, 1]])  # 0b1010, LSB first
        b = BinaryCodes.from_bits([[0, 1, 1, 0]])  # 0b0110
        assert a.words[0, 0] == 0b1010 and b.words[0, 0] == 0b0110
        assert hashing.hamming_distance(a.row(0), b.row(0)) == 2
        assert hashing.hamming_distance(a.row(0), a.row(0)) == 0

    def test_complement_64(self, rng):
        bits = rng.integers(0, 2, (1, 64)).astype(bool)
        a, b = BinaryCodes.from_bits(bits), BinaryCodes.from_bits(~bits)
        assert hashing.hamming_distance(a.row(0), b.row(0)) == 64

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            hashing.hamming_distance(np.zeros(1, np.uint64), np.zeros(2, np.uint64))

    @settings(max_examples=100, deadline=None)
    @given(b=st.integers(1, 200), seed=st.integers(0, 2**32 - 1))
    def test_metric_and_naive_oracle(self, b, seed):
        r = np.random.default_rng(seed)
        bits = r.integers(0, 2, (3, b)).astype(bool)
        codes = BinaryCodes.from_bits(bits)
        d = lambda i, j: hashing.hamming_distance(codes.row(i), codes.row(j))  # noqa: E731
        for i in range(3):
            assert d(i, i) == 0
            for j in range(3):
                assert d(i, j) == d(j, i) == naive_hamming(bits[i], bits[j])
        assert d(0, 2) <= d(0, 1) + d(1, 2)
        np.testing.assert_array_equal(hashing.hamming_to_all(codes, codes.row(0)), [d(0, j) for j in range(3)])


class TestPacking:
    @settings(max_examples=50, deadline=None)
    @given(m=st.integers(1, 5), b=st.integers(1, 150), seed=st.integers(0, 1000))
    def test_roundtrip_and_zero_tail(self, m, b, seed):
        bits = np.random.default_rng(seed).integers(0, 2, (m, b)).astype(bool)
        codes = BinaryCodes.from_bits(bits)
        assert codes.words.shape == (m, -(-b // 64))
        np.testing.assert_array_equal(codes.to_bits(), bits)
        if b % 64:
            assert np.all(codes.words[:, -1] >> np.uint64(b % 64) == 0)

    def test_nonzero_tail_rejected(self):
        with pytest.raises(DataError):
            BinaryCodes(np.array([[1 << 5]], dtype=np.uint64), 4)

    def test_file_roundtrip(self, tmp_path, rng):
        codes = BinaryCodes.from_bits(rng.integers(0, 2, (7, 70)).astype(bool))
        hashing.save_codes(codes, tmp_path / "c.gemc")
        raw = (tmp_path / "c.gemc").read_bytes()
        assert raw[:4] == b"GEMC" and len(raw) == 24 + 7 * 2 * 8
        back = hashing.load_codes(tmp_path / "c.gemc")
        assert back.n_bits == 70
        np.testing.assert_array_equal(back.words, codes.words)

    def test_bad_file(self, tmp_path):
        (tmp_path / "c.gemc").write_bytes(b"GEMB" + bytes(20))
        with pytest.raises(FormatError):
            hashing.load_codes(tmp_path / "c.gemc")
