"""Transform, quantizer, scan order, entropy layer, candidates, and the stream format."""

import os
import struct
import subprocess
import sys

import numpy as np
import pytest

from idsecodec import _kernels_py
from idsecodec.codec import (
    _HEADER,
    N_CANDIDATES,
    SIDE_INFO_BITS,
    BitReader,
    BitWriter,
    QuantizerSpec,
    TransformSpec,
    decode_stream,
    demux,
    dct_forward,
    dct_inverse,
    dequantize,
    entropy_decode_block,
    entropy_encode_block,
    enumerate_candidates,
    mux,
    quantize,
    rebuild_block,
    zigzag,
)
from idsecodec.core import FormatError, ImagePlane, make_rng
from idsecodec.kernels import BACKEND, count_block_bits


class TestTransform:
    def test_matrix_is_orthonormal(self):
        for size in (4, 16):
            t = TransformSpec(size).matrix
            assert np.allclose(t @ t.T, np.eye(size), atol=1e-12)

    def test_round_trip_and_parseval(self):
        rng = make_rng(10)
        for size in (4, 16):
            spec = TransformSpec(size)
            for _ in range(20):
                block = rng.uniform(-255.0, 255.0, (size, size))
                y = dct_forward(block, spec)
                assert np.allclose(dct_inverse(y, spec), block, atol=1e-10)
                assert abs(np.sum(y * y) - np.sum(block * block)) < 1e-8

    def test_dc_basis_is_flat(self):
        y = dct_forward(np.full((4, 4), 8.0), TransformSpec(4))
        assert abs(y[0, 0] - 32.0) < 1e-12  # 8 * sqrt(16)
        assert np.max(np.abs(y.ravel()[1:])) < 1e-12

    def test_synthesis_operator_matches_inverse(self):
        rng = make_rng(11)
        for size in (4, 16):
            spec = TransformSpec(size)
            u = spec.operator()
            t = spec.matrix
            assert np.array_equal(u, np.kron(t.T, t.T))
            y = rng.standard_normal((size, size))
            assert np.allclose(u @ y.ravel(), dct_inverse(y, spec).ravel(), atol=1e-12)

    def test_invalid_size_rejected(self):
        with pytest.raises(ValueError):
            TransformSpec(8)
        with pytest.raises(ValueError):
            dct_forward(np.zeros((4, 4)), TransformSpec(16))


class TestQuantizer:
    def test_step_doubles_every_six_qp(self):
        assert QuantizerSpec(4).step == 1.0
        assert QuantizerSpec(10).step == 2.0
        assert QuantizerSpec(4, dqp=-4).step == 2.0 ** (-4 / 6)
        assert abs(QuantizerSpec(22).step / QuantizerSpec(16).step - 2.0) < 1e-12

    def test_dqp_range_enforced(self):
        with pytest.raises(ValueError):
            QuantizerSpec(30, dqp=5)
        with pytest.raises(ValueError):
            QuantizerSpec(30, dqp=-5)

    def test_half_away_rounding(self):
        spec = QuantizerSpec(4)  # step exactly 1.0
        coeffs = np.array([0.5, -0.5, 1.49, -1.5, 0.49, -0.49, 2.5])
        levels = quantize(coeffs, spec)
        assert levels.dtype == np.int32
        assert levels.tolist() == [1, -1, 1, -2, 0, 0, 3]

    def test_quantize_preserves_shape_and_inverts(self):
        rng = make_rng(12)
        spec = QuantizerSpec(20, dqp=2)
        coeffs = rng.uniform(-100.0, 100.0, (4, 4))
        levels = quantize(coeffs, spec)
        assert levels.shape == (4, 4)
        assert np.max(np.abs(dequantize(levels, spec) - coeffs)) <= spec.step / 2 + 1e-12


class TestZigzag:
    def test_size4_order(self):
        expected = [0, 1, 4, 8, 5, 2, 3, 6, 9, 12, 13, 10, 7, 11, 14, 15]
        assert zigzag(4).tolist() == expected

    def test_size16_is_diagonal_permutation(self):
        order = zigzag(16)
        assert sorted(order.tolist()) == list(range(256))
        diags = [(i // 16) + (i % 16) for i in order]
        assert diags == sorted(diags)

    def test_other_sizes_rejected(self):
        with pytest.raises(ValueError):
            zigzag(8)


class TestBitIo:
    def test_fixed_width_round_trip(self):
        rng = make_rng(13)
        writer = BitWriter()
        values = [(int(rng.integers(0, 1 << w)), w) for w in (1, 3, 7, 16, 31) for _ in range(8)]
        for value, width in values:
            writer.write_bits(value, width)
        reader = BitReader(writer.to_bytes())
        for value, width in values:
            assert reader.read_bits(width) == value

    def test_exp_golomb_round_trip(self):
        writer = BitWriter()
        ue_values = list(range(0, 70)) + [255, 1 << 20, (1 << 32) - 1]
        se_values = list(range(-33, 34)) + [-4096, 4095]
        for v in ue_values:
            writer.write_ue(v)
        for v in se_values:
            writer.write_se(v)
        reader = BitReader(writer.to_bytes())
        for v in ue_values:
            assert reader.read_ue() == v
        for v in se_values:
            assert reader.read_se() == v

    def test_known_ue_codewords(self):
        writer = BitWriter()
        for v in (0, 1, 2, 3):
            writer.write_ue(v)
        assert writer.bits01() == "1" + "010" + "011" + "00100"

    def test_bit_length_and_padding(self):
        writer = BitWriter()
        writer.write_bits(0b101, 3)
        assert writer.bit_length == 3
        data = writer.to_bytes()
        assert data == bytes([0b10100000])

    def test_read_past_end_rejected(self):
        reader = BitReader(b"\xff")
        reader.read_bits(8)
        with pytest.raises(FormatError):
            reader.read_bits(1)

    def test_malformed_exp_golomb_prefix_rejected(self):
        with pytest.raises(FormatError):
            BitReader(bytes(20)).read_ue()  # 160 zero bits, no marker


class TestEntropyLayer:
    def test_round_trip_random_levels(self):
        rng = make_rng(14)
        for n_coeffs in (16, 256):
            for _ in range(50):
                levels = np.zeros(n_coeffs, dtype=np.int32)
                nnz = int(rng.integers(0, n_coeffs // 3))
                pos = rng.choice(n_coeffs, size=nnz, replace=False)
                levels[pos] = rng.integers(-40, 41, size=nnz)
                bits = entropy_encode_block(levels)
                assert np.array_equal(entropy_decode_block(bits, n_coeffs), levels)
                assert len(bits) == count_block_bits(levels)

    def test_zero_block_codes_in_one_bit(self):
        assert entropy_encode_block(np.zeros(256, dtype=np.int32)) == "1"
        assert count_block_bits(np.zeros(16, dtype=np.int32)) == 1


class TestKernelBackends:
    def test_backends_agree_on_quantization(self):
        from idsecodec.kernels import quantize_half_away

        rng = make_rng(15)
        for _ in range(50):
            step = float(rng.uniform(0.1, 25.0))
            y = rng.uniform(-80.0, 80.0, 64)
            y[:8] = np.arange(-4, 4) * step + step / 2.0  # exact half-step ties
            active = quantize_half_away(y, step)
            pure = _kernels_py.quantize_half_away(y, step)
            assert active.dtype == pure.dtype == np.int32
            assert np.array_equal(active, pure)

    def test_backends_agree_on_bit_counts(self):
        from idsecodec.kernels import count_block_bits

        rng = make_rng(16)
        for _ in range(50):
            levels = np.zeros(256, dtype=np.int32)
            pos = rng.choice(256, size=int(rng.integers(0, 60)), replace=False)
            levels[pos] = rng.integers(-100, 101, size=pos.size)
            assert count_block_bits(levels) == _kernels_py.count_block_bits(levels)

    def test_pure_python_env_switch(self):
        code = "import idsecodec.kernels as k; print(k.BACKEND)"
        env = dict(os.environ, IDSE_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
        )
        assert out.stdout.strip() == "python"

    def test_backend_reports_a_known_name(self):
        assert BACKEND in ("python", "cython")


class TestCandidates:
    def test_eighteen_candidates_in_dqp_major_order(self):
        block = make_rng(16).uniform(0.0, 255.0, (16, 16))
        cands = enumerate_candidates(block, 30)
        assert len(cands) == N_CANDIDATES
        expected = [(dqp, p) for dqp in range(-4, 5) for p in ("whole16", "split4")]
        assert [(c.dqp, c.partition) for c in cands] == expected

    def test_candidate_fields_are_consistent(self):
        block = make_rng(17).uniform(0.0, 255.0, (16, 16))
        for c in enumerate_candidates(block, 33):
            assert np.allclose(c.recon, rebuild_block(c.partition, c.dqp, c.levels, 33), atol=0)
            assert np.array_equal(c.pixel_error, c.recon - block)
            n_level_bits = sum(count_block_bits(lv) for lv in c.levels)
            assert c.bits == SIDE_INFO_BITS + n_level_bits

    def test_zero_block_minimal_bits(self):
        cands = enumerate_candidates(np.zeros((16, 16)), 30)
        for c in cands:
            assert all(not lv.any() for lv in c.levels)
            assert np.all(c.recon == 0.0)
            # whole16: 5 side bits + one ue(0); split4: 5 + sixteen ue(0)
            assert c.bits == (6 if c.partition == "whole16" else 21)

    def test_transform_domain_error_matches_pixel_error(self):
        # orthonormal synthesis: same energy in both domains
        block = make_rng(18).uniform(0.0, 255.0, (16, 16))
        for c in enumerate_candidates(block, 27):
            assert abs(np.sum(c.coeff_error**2) - np.sum(c.pixel_error**2)) < 1e-8

    def test_fine_quantization_reconstructs_closely(self):
        block = make_rng(19).uniform(0.0, 255.0, (16, 16))
        cands = enumerate_candidates(block, 0)
        best = min(np.max(np.abs(c.pixel_error)) for c in cands)
        assert best < 0.5

    def test_bad_block_shape_rejected(self):
        with pytest.raises(ValueError):
            enumerate_candidates(np.zeros((8, 8)), 30)


def _coded_plane(seed=20, shape=(24, 40), qp=28):
    plane = ImagePlane.from_array(make_rng(seed).uniform(0.0, 255.0, shape))
    choices = [
        enumerate_candidates(plane.grid.block_view(plane.pixels, i), qp)[int(make_rng(seed + i).integers(0, 18))]
        for i in range(plane.grid.n_blocks)
    ]
    return plane, qp, choices


class TestStreamFormat:
    def test_mux_demux_round_trip(self):
        plane, qp, choices = _coded_plane()
        data = mux(plane, qp, "idse", choices)
        header, decoded = demux(data)
        assert (header.width, header.height) == (plane.width, plane.height)
        assert (header.orig_width, header.orig_height) == (plane.orig_width, plane.orig_height)
        assert header.base_qp == qp and header.metric == "idse"
        for choice, cand in zip(decoded, choices):
            assert choice.partition == cand.partition
            assert choice.dqp == cand.dqp
            assert all(np.array_equal(a, b) for a, b in zip(choice.levels, cand.levels))

    def test_decode_stream_rebuilds_choices(self):
        plane, qp, choices = _coded_plane(seed=21)
        data = mux(plane, qp, "sse", choices)
        out, header = decode_stream(data)
        expected = np.zeros_like(plane.pixels)
        for i, c in enumerate(choices):
            r0, c0 = plane.grid.block_origin(i)
            expected[r0 : r0 + 16, c0 : c0 + 16] = c.recon
        assert np.array_equal(out.pixels, expected)
        assert out.cropped().shape == (24, 40)

    def test_mux_validation(self):
        plane, qp, choices = _coded_plane(seed=22)
        with pytest.raises(ValueError):
            mux(plane, qp, "rmse", choices)
        with pytest.raises(ValueError):
            mux(plane, 52, "sse", choices)
        with pytest.raises(ValueError):
            mux(plane, qp, "sse", choices[:-1])

    def test_demux_error_paths(self):
        plane, qp, choices = _coded_plane(seed=23)
        data = bytearray(mux(plane, qp, "sse", choices))

        bad = bytearray(data)
        bad[:4] = b"XDS1"
        with pytest.raises(FormatError):
            demux(bytes(bad))

        bad = bytearray(data)
        bad[4] = 9  # version
        with pytest.raises(FormatError):
            demux(bytes(bad))

        bad = bytearray(data)
        struct.pack_into("<I", bad, 5, 60)  # width not a multiple of 16
        with pytest.raises(FormatError):
            demux(bytes(bad))

        bad = bytearray(data)
        struct.pack_into("<I", bad, 13, plane.width + 1)  # orig width too large
        with pytest.raises(FormatError):
            demux(bytes(bad))

        bad = bytearray(data)
        bad[21] = 52  # qp out of range
        with pytest.raises(FormatError):
            demux(bytes(bad))

        bad = bytearray(data)
        bad[22] = 7  # unknown metric id
        with pytest.raises(FormatError):
            demux(bytes(bad))

        with pytest.raises(FormatError):
            demux(bytes(data[:20]))  # shorter than header

        with pytest.raises(FormatError):
            demux(bytes(data) + b"\x00")  # a full trailing byte

    def test_demux_rejects_nonzero_padding_and_bad_dqp(self):
        plane = ImagePlane.from_array(np.zeros((16, 16)))
        choices = [enumerate_candidates(plane.pixels, 30)[0]]
        data = bytearray(mux(plane, 30, "sse", choices))
        # single zero block: 6 payload bits, so the last two bits are padding
        assert len(data) == _HEADER.size + 1
        data[-1] |= 0x03
        with pytest.raises(FormatError):
            demux(bytes(data))

        # craft a payload whose 4-bit dqp field decodes to 7 (out of range)
        writer = BitWriter()
        writer.write_bits(0, 1)
        writer.write_bits(7, 4)
        writer.write_ue(0)
        body = writer.to_bytes()
        header = bytes(mux(plane, 30, "sse", choices)[: _HEADER.size])
        with pytest.raises(FormatError):
            demux(header + body)
