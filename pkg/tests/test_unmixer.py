import numpy as np
import pytest
from scipy.signal import butter, correlate, lfilter
from scipy.signal.windows import tukey

from rdsep.signals import MultichannelSignal
from rdsep.unmixer import (StreamingUnmixer, UnmixingCoeffs, decode,
                           default_max_delay, encode, fractional_delay,
                           passthrough_coeffs, streaming_unmix, unmix)


def bandlimited(n, cutoff, seed, fade=0.1):
    """Smooth-onset band-limited noise (a step onset would be broadband)."""
    rng = np.random.default_rng(seed)
    b, a = butter(6, cutoff)
    x = lfilter(b, a, rng.normal(size=n + 4000))[4000:]
    return x * tukey(n, fade)


def measured_lag(y, x, margin=300):
    """Sub-sample delay of y relative to x: cross-correlation peak with
    parabolic interpolation. Full-overlap correlation keeps the envelope
    flat around the peak, which would otherwise bias the interpolation on
    narrowband signals."""
    seg = y[margin:-margin]
    c = correlate(x, seg, mode="valid")  # c[i] = sum_j x[i+j] seg[j]
    k = int(np.argmax(c))
    num = 0.5 * (c[k - 1] - c[k + 1])
    den = c[k - 1] - 2 * c[k] + c[k + 1]
    return margin - (k + num / den)


class TestFractionalDelay:
    def test_zero_delay_is_identity(self):
        x = np.random.default_rng(0).normal(size=500)
        assert np.array_equal(fractional_delay(x, 0.0), x)

    def test_integer_delay_is_pure_shift(self):
        x = np.random.default_rng(1).normal(size=200)
        y = fractional_delay(x, 3.0)
        assert np.all(y[:3] == 0.0)
        assert np.array_equal(y[3:], x[:-3])

    def test_half_sample_delay_on_low_sinusoid(self):
        fs = 16000
        t = np.arange(fs) / fs
        x = np.sin(2 * np.pi * 100 * t)
        y = fractional_delay(x, 2.5)
        assert measured_lag(y, x) == pytest.approx(2.5, abs=0.05)

    def test_group_delay_at_low_frequencies(self):
        # measured delay below 0.1 Nyquist within 0.05 samples
        x = bandlimited(16000, 0.08, seed=3)
        for d in (0.25, 1.5, 5.9, 13.3):
            lag = measured_lag(fractional_delay(x, d), x)
            assert lag == pytest.approx(d, abs=0.05)

    def test_delay_additivity_within_minus_60_db(self):
        x = bandlimited(16000, 0.08, seed=4)
        for d1, d2 in [(0.3, 0.4), (1.2, 2.7), (0.5, 0.5), (3.9, 0.05)]:
            cascade = fractional_delay(fractional_delay(x, d1), d2)
            direct = fractional_delay(x, d1 + d2)
            err_db = 10 * np.log10(
                np.sum((cascade - direct) ** 2) / np.sum(direct ** 2))
            assert err_db < -60.0

    def test_output_length_preserved(self):
        x = np.ones(100)
        assert fractional_delay(x, 7.3).shape == (100,)
        assert fractional_delay(x, 150.0).shape == (100,)  # longer than signal

    def test_rejects_negative_and_out_of_bound(self):
        x = np.zeros(10)
        with pytest.raises(ValueError):
            fractional_delay(x, -0.1)
        with pytest.raises(ValueError):
            fractional_delay(x, 5.0, d_max=4.0)

    def test_lagrange_variant(self):
        x = bandlimited(8000, 0.05, seed=5)
        y = fractional_delay(x, 2.5, method="lagrange")
        assert measured_lag(y, x) == pytest.approx(2.5, abs=0.05)
        with pytest.raises(ValueError):
            fractional_delay(x, 1.0, method="sinc")


class TestCoeffs:
    def test_validation(self):
        with pytest.raises(ValueError):   # mics < sources
            UnmixingCoeffs(np.ones((2, 3)), np.zeros((2, 3)), 5.0)
        with pytest.raises(ValueError):   # sources < 2
            UnmixingCoeffs(np.ones((3, 1)), np.zeros((3, 1)), 5.0)
        with pytest.raises(ValueError):   # delay above bound
            UnmixingCoeffs(np.ones((2, 2)), np.full((2, 2), 9.0), 5.0)
        with pytest.raises(ValueError):   # non-finite
            UnmixingCoeffs(np.full((2, 2), np.nan), np.zeros((2, 2)), 5.0)

    def test_encode_layout(self):
        c = UnmixingCoeffs(np.array([[1.0, 2.0], [3.0, 4.0]]),
                           np.array([[0.1, 0.2], [0.3, 0.4]]), 5.0)
        assert np.array_equal(encode(c),
                              [1.0, 0.1, 2.0, 0.2, 3.0, 0.3, 4.0, 0.4])

    def test_vector_length_is_2ms(self):
        rng = np.random.default_rng(0)
        assert encode(decode(rng.normal(size=8), 2, 2, 100.0)).shape == (8,)
        with pytest.raises(ValueError):
            decode(np.zeros(7), 2, 2, 100.0)

    def test_decode_clamps_delays_only(self):
        vec = np.array([0.5, -1.0, -2.0, 1e6, 3.0, 2.0, -9.0, 0.0])
        c = decode(vec, 2, 2, 10.0)
        assert np.array_equal(c.delay, [[0.0, 10.0], [2.0, 0.0]])
        assert np.array_equal(c.attenuation, [[0.5, -2.0], [3.0, -9.0]])

    def test_encode_decode_round_trip_is_clamp(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            vec = rng.normal(size=12) * 20
            out = encode(decode(vec, 3, 2, 8.0))
            expected = vec.reshape(3, 2, 2).copy()
            expected[:, :, 1] = np.clip(expected[:, :, 1], 0.0, 8.0)
            assert np.array_equal(out, expected.reshape(-1))

    def test_default_max_delay_from_geometry(self):
        mics = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
        d = default_max_delay(mics, 16000)
        assert d == pytest.approx(1.5 * 0.2 / 343.0 * 16000)


class TestUnmix:
    def rand_signal(self, m=2, n=4000, seed=0):
        return MultichannelSignal(
            16000, np.random.default_rng(seed).normal(size=(m, n)) * 0.1)

    def test_identity_coeffs(self):
        x = self.rand_signal()
        c = UnmixingCoeffs(np.eye(2), np.zeros((2, 2)), 10.0)
        assert np.array_equal(unmix(x, c).data, x.data)

    def test_all_zero_attenuation(self):
        x = self.rand_signal()
        c = UnmixingCoeffs(np.zeros((2, 2)), np.ones((2, 2)), 10.0)
        assert np.all(unmix(x, c).data == 0.0)

    def test_channel_count_mismatch(self):
        x = self.rand_signal(m=3)
        c = UnmixingCoeffs(np.eye(2), np.zeros((2, 2)), 10.0)
        with pytest.raises(ValueError):
            unmix(x, c)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x1 = self.rand_signal(seed=1)
        x2 = self.rand_signal(seed=2)
        c = UnmixingCoeffs(rng.uniform(-1, 1, (2, 2)),
                           rng.uniform(0, 9, (2, 2)), 10.0)
        a, b = 0.7, -1.3
        combined = MultichannelSignal(16000, a * x1.data + b * x2.data)
        lhs = unmix(combined, c).data
        rhs = a * unmix(x1, c).data + b * unmix(x2, c).data
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-15)

    def test_known_anechoic_inverse_cancels_crosstalk(self):
        # Build a 2x2 anechoic mixture with known attenuated delays, then
        # apply the analytically derived delay-and-subtract inverse.
        fs = 16000
        rng = np.random.default_rng(9)
        s1 = bandlimited(4 * fs, 0.3, seed=11, fade=0.05)
        s2 = bandlimited(4 * fs, 0.3, seed=12, fade=0.05)
        # source s arrives at mic m with gain g[m][s] and delay t[m][s]
        g = np.array([[1.0, 0.8], [0.9, 1.0]])
        t = np.array([[0.0, 4.3], [2.9, 0.0]])
        x = np.zeros((2, 4 * fs))
        for m in range(2):
            x[m] = g[m, 0] * fractional_delay(s1, t[m, 0]) + \
                   g[m, 1] * fractional_delay(s2, t[m, 1])
        mixture = MultichannelSignal(fs, x)

        att = np.array([[1.0, -g[1, 0] / g[0, 0]],
                        [-g[0, 1] / g[1, 1], 1.0]])
        # cancel s2 in out1: d[0,0] + t[0,1] == d[1,0] + t[1,1]
        dly = np.zeros((2, 2))
        dly[0, 0] = max(t[1, 1] - t[0, 1], 0.0)
        dly[1, 0] = max(t[0, 1] - t[1, 1], 0.0)
        # cancel s1 in out2: d[0,1] + t[0,0] == d[1,1] + t[1,0]
        dly[0, 1] = max(t[1, 0] - t[0, 0], 0.0)
        dly[1, 1] = max(t[0, 0] - t[1, 0], 0.0)
        coeffs = UnmixingCoeffs(att, dly, 10.0)
        y = unmix(mixture, coeffs).data

        # subtract the wanted source content; what is left is crosstalk
        s1_content = (att[0, 0] * g[0, 0] * fractional_delay(s1, dly[0, 0] + t[0, 0])
                      + att[1, 0] * g[1, 0] * fractional_delay(s1, dly[1, 0] + t[1, 0]))
        leak = y[0] - s1_content
        assert 10 * np.log10(np.sum(leak ** 2) / np.sum(y[0] ** 2)) < -30.0

        s2_content = (att[0, 1] * g[0, 1] * fractional_delay(s2, dly[0, 1] + t[0, 1])
                      + att[1, 1] * g[1, 1] * fractional_delay(s2, dly[1, 1] + t[1, 1]))
        leak = y[1] - s2_content
        assert 10 * np.log10(np.sum(leak ** 2) / np.sum(y[1] ** 2)) < -30.0


class TestStreaming:
    def make_case(self, seed=0, m=2, n=3000):
        rng = np.random.default_rng(seed)
        coeffs = UnmixingCoeffs(rng.uniform(-1, 1, (m, 2)),
                                rng.uniform(0, 12, (m, 2)), 14.0)
        sig = MultichannelSignal(16000, rng.normal(size=(m, n)) * 0.2)
        return coeffs, sig

    @pytest.mark.parametrize("chunk", [1, 7, 160, 4096])
    def test_streaming_matches_batch_bit_exactly(self, chunk):
        coeffs, sig = self.make_case()
        batch = unmix(sig, coeffs)
        su = StreamingUnmixer(coeffs)
        outs = [su.process(sig.data[:, i:i + chunk])
                for i in range(0, sig.n_samples, chunk)]
        assert np.array_equal(np.concatenate(outs, axis=1), batch.data)
        assert su.samples_in == su.samples_out == sig.n_samples

    def test_whole_signal_as_one_chunk(self):
        coeffs, sig = self.make_case(seed=5)
        su = StreamingUnmixer(coeffs)
        assert np.array_equal(su.process(sig.data), unmix(sig, coeffs).data)

    def test_swap_only_affects_later_chunks(self):
        coeffs, sig = self.make_case(seed=6)
        other = UnmixingCoeffs(coeffs.attenuation * 0.5, coeffs.delay, 14.0)
        boundary = 1600

        su_plain = StreamingUnmixer(coeffs)
        head_plain = su_plain.process(sig.data[:, :boundary])

        su_swap = StreamingUnmixer(coeffs)
        head_swap = su_swap.process(sig.data[:, :boundary])
        su_swap.swap(other)
        tail_swap = su_swap.process(sig.data[:, boundary:])

        assert np.array_equal(head_plain, head_swap)
        # post-swap output equals a fresh batch unmix of the tail
        tail_ref = unmix(MultichannelSignal(16000, sig.data[:, boundary:]), other)
        assert np.array_equal(tail_swap, tail_ref.data)

    def test_swap_shape_mismatch_rejected(self):
        coeffs, sig = self.make_case()
        su = StreamingUnmixer(coeffs)
        bad = passthrough_coeffs(3, 2, 14.0)
        with pytest.raises(ValueError):
            su.swap(bad)

    def test_chunk_shape_validation(self):
        coeffs, _ = self.make_case()
        su = StreamingUnmixer(coeffs)
        with pytest.raises(ValueError):
            su.process(np.zeros((3, 10)))
        with pytest.raises(ValueError):
            su.process(np.zeros((2, 0)))

    def test_functional_wrapper_swaps_on_value_change(self):
        coeffs, sig = self.make_case(seed=8)
        y1, state = streaming_unmix(sig.data[:, :500], coeffs)
        y2, state = streaming_unmix(sig.data[:, 500:1000], coeffs, state)
        rescaled = UnmixingCoeffs(coeffs.attenuation * 2.0, coeffs.delay, 14.0)
        y3, state = streaming_unmix(sig.data[:, 1000:1500], rescaled, state)
        ref = unmix(MultichannelSignal(16000, sig.data[:, 1000:1500]), rescaled)
        assert np.array_equal(y3, ref.data)

    def test_passthrough_coeffs_average_inputs(self):
        sig = MultichannelSignal(16000, np.random.default_rng(1).normal(size=(4, 100)))
        y = unmix(sig, passthrough_coeffs(4, 2, 5.0))
        expected = sig.data.mean(axis=0)
        assert np.allclose(y.data[0], expected, rtol=1e-12)
        assert np.allclose(y.data[1], expected, rtol=1e-12)
