import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmkws import backends
from pdmkws.errors import FormatError
from pdmkws.pdm_codec import (
    ModulatorState,
    PdmSignal,
    encode,
    measure_snr,
    pcm2pdm_if,
    pcm2pdm_mod,
    pcm2pdm_par,
    pcm2pdm_par_chunked,
    pcm2pdm_seq,
    pdm2pcm,
    read_pdm,
    write_pdm,
)
from pdmkws.signal_io import PcmSignal

BACKENDS = backends.backend_names()

grid_signal = st.lists(
    st.integers(0, 1024).map(lambda n: n / 1024.0), min_size=1, max_size=300
)


class TestSequential:
    def test_zero_input_alternates(self):
        y, state = pcm2pdm_seq([0.0, 0.0, 0.0])
        assert list(y) == [-1, 1, -1]
        assert state.qe == 1.0  # last step emitted -1, so qe -= -1

    def test_full_scale_saturates(self):
        y, _ = pcm2pdm_seq(np.ones(16))
        assert np.all(y == 1)

    def test_mod_half_density(self):
        bits, _ = pcm2pdm_mod([0.5, 0.5, 0.5])
        assert list(bits) == [1, 0, 1]

    def test_mod_ceil_counts(self):
        bits, _ = pcm2pdm_mod([0.6, 0.6, 0.6])
        assert list(bits) == [1, 1, 0]

    def test_mod_zero_stays_silent(self):
        bits, _ = pcm2pdm_mod(np.zeros(32))
        assert not bits.any()

    def test_if_floor_counts(self):
        bits, _ = pcm2pdm_if([0.6, 0.6, 0.6])
        assert list(bits) == [0, 1, 0]

    def test_if_unit_step_fires_immediately(self):
        bits, _ = pcm2pdm_if([1.0, 0.0])
        assert list(bits) == [1, 0]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            pcm2pdm_mod([1.5])
        with pytest.raises(ValueError):
            pcm2pdm_seq([-2.0])

    @pytest.mark.parametrize("fn", [pcm2pdm_seq, pcm2pdm_mod, pcm2pdm_if])
    def test_chunked_state_threading(self, fn, rng):
        x = rng.random(257)
        if fn is pcm2pdm_seq:
            x = 2.0 * x - 1.0
        whole, end_state = fn(x)
        head, mid_state = fn(x[:100])
        tail, tail_state = fn(x[100:], mid_state)
        np.testing.assert_array_equal(np.concatenate([head, tail]), whole)
        assert tail_state.qe == pytest.approx(end_state.qe)

    @given(grid_signal)
    def test_mod_matches_ceil_of_cumsum(self, values):
        bits, _ = pcm2pdm_mod(values)
        counts = np.cumsum(bits)
        expected = np.ceil(np.cumsum(values) - 1e-12)
        np.testing.assert_array_equal(counts, expected)

    @given(grid_signal)
    def test_if_matches_floor_of_cumsum(self, values):
        bits, _ = pcm2pdm_if(values)
        counts = np.cumsum(bits)
        np.testing.assert_array_equal(counts, np.floor(np.cumsum(values) + 1e-12))

    @given(grid_signal)
    def test_ceil_floor_bracketing(self, values):
        mod_bits, _ = pcm2pdm_mod(values)
        if_bits, _ = pcm2pdm_if(values)
        diff = np.cumsum(mod_bits.astype(int)) - np.cumsum(if_bits.astype(int))
        assert diff.min() >= 0 and diff.max() <= 1

    @given(grid_signal)
    def test_density_preservation(self, values):
        n = len(values)
        for fn in (pcm2pdm_mod, pcm2pdm_if):
            bits, _ = fn(values)
            assert abs(bits.mean() - np.mean(values)) <= 1.0 / n + 1e-12


class TestParallel:
    def test_leading_element_rule(self):
        assert list(pcm2pdm_par([0.5, 0.5, 0.5])) == [0, 1, 0]
        assert list(pcm2pdm_par([1.0, 0.0])) == [1, 0]

    def test_equals_if_variant_on_hand_case(self):
        x = [0.6, 0.6, 0.6]
        np.testing.assert_array_equal(pcm2pdm_par(x), pcm2pdm_if(x)[0])

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            pcm2pdm_par([0.5], th=0.0)

    @given(grid_signal)
    def test_par_equals_if_off_ties(self, values):
        c = np.cumsum(values)
        if np.any(np.abs(c - np.round(c)) < 2**-30):
            return  # exact integer prefix sums are resolved by the floor rule
        par = pcm2pdm_par(values)
        seq, _ = pcm2pdm_if(values)
        np.testing.assert_array_equal(par, seq)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_backend_parity_bitwise(self, backend, rng):
        x = rng.random(40000)  # arbitrary floats: same canonical cumsum
        np.testing.assert_array_equal(
            pcm2pdm_par(x, backend=backend), pcm2pdm_par(x, backend=None)
        )

    def test_running_cumsum_matches_numpy(self, rng):
        x = rng.random(100000)
        for name in BACKENDS:
            c = backends.kernels(name).running_cumsum(x)
            np.testing.assert_array_equal(c, np.cumsum(x))

    def test_chunked_degenerate_and_unit_chunks(self, rng):
        x = rng.random(5000)
        base = pcm2pdm_par(x)
        np.testing.assert_array_equal(pcm2pdm_par_chunked(x, chunk_len=len(x)), base)
        np.testing.assert_array_equal(pcm2pdm_par_chunked(x, chunk_len=1), base)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_chunked_invariance(self, backend, rng):
        x = rng.integers(0, 1 << 20, size=200000).astype(np.float64) / (1 << 20)
        base = pcm2pdm_par(x, backend=backend)
        for chunk_len in (1024, 4096, 65536):
            for workers in (1, 4):
                out = pcm2pdm_par_chunked(
                    x, chunk_len=chunk_len, workers=workers, backend=backend
                )
                np.testing.assert_array_equal(out, base)

    def test_validation(self, rng):
        x = rng.random(16)
        with pytest.raises(ValueError):
            pcm2pdm_par_chunked(x, chunk_len=0)
        with pytest.raises(ValueError):
            pcm2pdm_par_chunked(x, workers=0)


class TestDecode:
    def test_all_ones_steady_state(self):
        pdm = PdmSignal(np.ones(4096, dtype=np.uint8), 16000, 4)
        dec = pdm2pcm(pdm)
        settle = (16 * 4 + 1) // 4 + 1
        assert np.max(np.abs(dec.samples[settle:-settle] - 1.0)) <= 1e-6

    def test_alternating_is_midscale(self):
        # the 0101 pattern is a tone at the PDM Nyquist rate; what remains
        # after decoding is the FIR stopband leakage (~-53 dB for Hamming)
        bits = np.tile([0, 1], 2048).astype(np.uint8)
        dec = pdm2pcm(PdmSignal(bits, 16000, 4))
        settle = 20
        assert np.max(np.abs(dec.samples[settle:-settle])) <= 2e-3

    def test_taps_validation(self):
        pdm = PdmSignal(np.ones(64, dtype=np.uint8), 16000, 2)
        with pytest.raises(ValueError):
            pdm2pcm(pdm, taps=4)
        with pytest.raises(ValueError):
            pdm2pcm(pdm, taps=1)

    def test_roundtrip_snr_improves_with_alpha(self):
        fs = 16000
        t = np.arange(fs // 2) / fs
        ref = PcmSignal(np.sin(2 * np.pi * 1000 * t), fs)
        snrs = []
        for alpha in (4, 16):
            dec = pdm2pcm(encode(ref, alpha))
            snrs.append(measure_snr(ref, dec))
        assert snrs[1] > snrs[0] + 6.0


class TestSnr:
    def test_identical_reports_sentinel(self):
        t = np.arange(4000) / 16000.0
        sig = PcmSignal(np.sin(2 * np.pi * 440 * t), 16000)
        assert measure_snr(sig, sig) >= 300.0

    def test_constructed_noise_level(self, rng):
        t = np.arange(16000) / 16000.0
        clean = 0.9 * np.sin(2 * np.pi * 1000 * t)
        noise = rng.normal(size=clean.shape)
        noise *= np.sqrt((clean**2).mean() / (noise**2).mean()) / 100.0  # -40 dB
        ref = PcmSignal(clean, 16000)
        dec = PcmSignal(np.clip(clean + noise, -1, 1), 16000)
        assert measure_snr(ref, dec) == pytest.approx(40.0, abs=0.5)

    def test_zero_reference_rejected(self):
        z = PcmSignal(np.zeros(2000), 16000)
        with pytest.raises(ValueError):
            measure_snr(z, z)

    def test_mismatched_inputs_rejected(self):
        a = PcmSignal(np.zeros(2000), 16000)
        b = PcmSignal(np.zeros(2001), 16000)
        with pytest.raises(ValueError):
            measure_snr(a, b)


class TestContainer:
    def test_nine_bits_pack_two_bytes(self, tmp_path):
        bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1], dtype=np.uint8)
        path = tmp_path / "x.pdm"
        write_pdm(PdmSignal(bits, 16000, 64), path)
        raw = path.read_bytes()
        assert len(raw) == 19 + 2
        assert raw[0:4] == b"PDM1"
        # final byte: bit 8 set, seven zero pad bits above it
        assert raw[-1] == 0b00000001

    def test_roundtrip_large_unaligned(self, tmp_path, rng):
        bits = (rng.random(1_000_003) < 0.37).astype(np.uint8)
        path = tmp_path / "big.pdm"
        sig = PdmSignal(bits, 16000, 32)
        write_pdm(sig, path)
        back = read_pdm(path)
        assert back.base_rate_hz == 16000 and back.alpha == 32
        np.testing.assert_array_equal(back.bits, bits)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pdm"
        write_pdm(PdmSignal(np.ones(8, dtype=np.uint8), 16000, 2), path)
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_pdm(path)

    def test_zero_alpha_rejected(self, tmp_path):
        path = tmp_path / "a0.pdm"
        write_pdm(PdmSignal(np.ones(8, dtype=np.uint8), 16000, 2), path)
        raw = bytearray(path.read_bytes())
        raw[9:11] = (0).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_pdm(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "tr.pdm"
        write_pdm(PdmSignal(np.ones(64, dtype=np.uint8), 16000, 2), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(FormatError):
            read_pdm(path)

    def test_bits_validation(self):
        with pytest.raises(ValueError):
            PdmSignal(np.array([0, 2], dtype=np.uint8), 16000, 1)
        with pytest.raises(ValueError):
            PdmSignal(np.array([1], dtype=np.uint8), 16000, 0)
