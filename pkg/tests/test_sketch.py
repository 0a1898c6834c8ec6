"""Rademacher sketches, JL sizing, sketched Jacobians, norms, and SKJ1 files."""

import math
import struct

import numpy as np
import pytest

from idsecodec.core import (
    BlockGrid,
    ConvergenceError,
    FormatError,
    GridMismatchError,
    ImagePlane,
    make_rng,
    read_pgm16,
)
from idsecodec.sketch import (
    MAX_SKETCH_ROWS,
    SketchedJacobian,
    SketchMatrix,
    block_slice,
    draw_sketch,
    frobenius_sq_per_block,
    importance_map,
    jl_dimension,
    read_sketch,
    sketch_linear_jacobian,
    spectral_norm_sq,
    write_importance_pgm,
    write_sketch,
)
from idsecodec.toyfe import make_extractor


class TestJlDimension:
    def test_pinned_values(self):
        assert jl_dimension(18, 0.3, 1.0) == 33
        assert jl_dimension(1, 0.5, 1.0) == 3

    def test_monotone_in_tolerance_and_candidates(self):
        assert jl_dimension(18, 0.2) > jl_dimension(18, 0.4)
        assert jl_dimension(100, 0.3) > jl_dimension(10, 0.3)

    def test_validation(self):
        with pytest.raises(ValueError):
            jl_dimension(0, 0.3)
        with pytest.raises(ValueError):
            jl_dimension(10, 0.0)
        with pytest.raises(ValueError):
            jl_dimension(10, 1.0)
        with pytest.raises(ValueError):
            jl_dimension(10, 0.3, c_jl=0.0)


class TestDrawSketch:
    def test_entries_are_scaled_signs(self):
        for n_s in (1, 8, 64):
            s = draw_sketch(n_s, 40, seed=5)
            assert s.entries.shape == (n_s, 40)
            assert (s.n_s, s.n_f) == (n_s, 40)
            assert np.all(np.isin(s.entries * math.sqrt(n_s), (-1.0, 1.0)))

    def test_deterministic_per_seed(self):
        a = draw_sketch(8, 100, seed=9).entries
        b = draw_sketch(8, 100, seed=9).entries
        c = draw_sketch(8, 100, seed=10).entries
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_signs_are_roughly_balanced(self):
        s = draw_sketch(64, 512, seed=3)
        frac_positive = float(np.mean(s.entries > 0))
        assert 0.45 < frac_positive < 0.55

    def test_row_guard(self):
        with pytest.raises(ValueError):
            draw_sketch(MAX_SKETCH_ROWS + 1, 16, seed=0)
        with pytest.raises(ValueError):
            draw_sketch(0, 16, seed=0)
        with pytest.raises(ValueError):
            draw_sketch(4, 0, seed=0)


class TestSketchLinearJacobian:
    def test_identity_extractor_with_all_ones_row(self):
        fe = make_extractor("identity", 16, 16)
        plane = ImagePlane.from_array(make_rng(1).uniform(0.0, 255.0, (16, 16)))
        S = SketchMatrix(entries=np.ones((1, fe.output_dim)), seed=0)
        J = sketch_linear_jacobian(fe, plane, S)
        assert np.array_equal(J.entries, np.ones((1, 256)))
        assert J.source_tag == "toy:identity"

    def test_linear_extractor_gives_input_independent_rows(self):
        fe = make_extractor("block_linear", 32, 32, out_per_block=4)
        S = draw_sketch(6, fe.output_dim, seed=4)
        a = sketch_linear_jacobian(fe, ImagePlane.from_array(make_rng(2).uniform(0, 255, (32, 32))), S)
        b = sketch_linear_jacobian(fe, ImagePlane.from_array(make_rng(3).uniform(0, 255, (32, 32))), S)
        assert np.allclose(a.entries, b.entries, atol=1e-12)

    def test_rows_equal_sketched_dense_jacobian(self):
        fe = make_extractor("blur_down", 32, 32)
        plane = ImagePlane.from_array(make_rng(4).uniform(0.0, 255.0, (32, 32)))
        S = draw_sketch(5, fe.output_dim, seed=6)
        J = sketch_linear_jacobian(fe, plane, S)
        dense = fe.dense_jacobian(plane.pixels)
        assert np.allclose(J.entries, S.entries @ dense, atol=1e-12)

    def test_conv_relu_rows_match_finite_differences(self):
        # the sketched rows are gradients of q(x) = S f(x); check them against
        # central differences away from ReLU kinks
        fe = make_extractor("conv_relu_conv", 16, 16)
        rng = make_rng(5)
        x = rng.uniform(40.0, 215.0, (16, 16))
        pre = np.abs(fe._pre_activations(x))
        assert pre.min() > 1e-3  # no kink nearby at this draw
        S = draw_sketch(3, fe.output_dim, seed=7)
        plane = ImagePlane.from_array(x)
        J = sketch_linear_jacobian(fe, plane, S)
        step = 1e-3
        worst = 0.0
        for p in rng.choice(256, size=60, replace=False):
            xp = x.copy()
            xm = x.copy()
            xp[p // 16, p % 16] += step
            xm[p // 16, p % 16] -= step
            fd_col = (S.entries @ fe.features(xp) - S.entries @ fe.features(xm)) / (2 * step)
            scale = max(np.max(np.abs(fd_col)), 1e-12)
            worst = max(worst, float(np.max(np.abs(fd_col - J.entries[:, p])) / scale))
        assert worst <= 1e-5


class TestBlockSliceAndMaps:
    def test_block_slice_selects_block_columns(self):
        J = SketchedJacobian(
            entries=make_rng(6).standard_normal((4, 32 * 32)),
            width=32,
            height=32,
            seed=0,
            source_tag="t",
        )
        grid = BlockGrid(32, 32)
        for i in range(grid.n_blocks):
            assert np.array_equal(block_slice(J, grid, i), J.entries[:, grid.block_pixel_indices(i)])

    def test_block_slice_grid_mismatch(self):
        J = SketchedJacobian(
            entries=np.zeros((2, 32 * 32)), width=32, height=32, seed=0, source_tag="t"
        )
        with pytest.raises(GridMismatchError):
            block_slice(J, BlockGrid(48, 32), 0)

    def test_importance_map_is_column_norms(self):
        entries = make_rng(7).standard_normal((5, 256))
        J = SketchedJacobian(entries=entries, width=16, height=16, seed=0, source_tag="t")
        assert np.allclose(importance_map(J), np.sum(entries**2, axis=0), atol=1e-12)

    def test_importance_pgm_is_max_normalized(self, tmp_path):
        path = str(tmp_path / "map.pgm")
        entries = make_rng(8).standard_normal((3, 256))
        J = SketchedJacobian(entries=entries, width=16, height=16, seed=0, source_tag="t")
        write_importance_pgm(path, J)
        img = read_pgm16(path)
        assert img.shape == (16, 16)
        assert img.max() == 65535

    def test_frobenius_per_block_sums_to_total(self):
        entries = make_rng(9).standard_normal((6, 48 * 32))
        J = SketchedJacobian(entries=entries, width=48, height=32, seed=0, source_tag="t")
        grid = BlockGrid(48, 32)
        per_block = frobenius_sq_per_block(J, grid)
        assert per_block.shape == (grid.n_blocks,)
        assert abs(per_block.sum() - np.sum(entries**2)) < 1e-8
        for i in range(grid.n_blocks):
            manual = float(np.sum(block_slice(J, grid, i) ** 2))
            assert abs(per_block[i] - manual) < 1e-10


class TestSpectralNormSq:
    def _wrap(self, entries, width=16, height=16):
        return SketchedJacobian(
            entries=entries, width=width, height=height, seed=0, source_tag="t"
        )

    def test_diagonal_matrix(self):
        entries = np.zeros((2, 256))
        entries[0, 0] = 3.0
        entries[1, 1] = 1.0
        assert abs(spectral_norm_sq(self._wrap(entries), tol=1e-12) - 9.0) < 1e-9

    def test_scaled_identity(self):
        entries = np.zeros((4, 256))
        entries[:, :4] = 2.5 * np.eye(4)
        assert abs(spectral_norm_sq(self._wrap(entries)) - 6.25) < 1e-9

    def test_matches_dense_eigensolver(self):
        for seed in range(5):
            entries = make_rng(seed).standard_normal((8, 256))
            J = self._wrap(entries)
            exact = float(np.linalg.eigvalsh(entries @ entries.T).max())
            assert abs(spectral_norm_sq(J, tol=1e-10) - exact) / exact < 1e-6

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError):
            spectral_norm_sq(self._wrap(np.zeros((2, 256))))

    def test_non_convergence_carries_last_estimate(self):
        entries = np.zeros((2, 256))
        entries[0, 0] = 1.0
        entries[1, 1] = 1.0 - 1e-12  # nearly equal top eigenvalues
        with pytest.raises(ConvergenceError) as excinfo:
            spectral_norm_sq(self._wrap(entries), tol=1e-300, max_iter=3)
        last = excinfo.value.last_estimate
        assert 0.0 < last <= 1.0 + 1e-9


class TestSketchFileFormat:
    def _sample(self):
        fe = make_extractor("blur_down", 32, 32)
        plane = ImagePlane.from_array(make_rng(11).uniform(0.0, 255.0, (32, 32)))
        return sketch_linear_jacobian(fe, plane, draw_sketch(4, fe.output_dim, seed=12))

    def test_round_trip_is_float32_exact(self, tmp_path):
        path = str(tmp_path / "j.skj")
        J = self._sample()
        write_sketch(path, J)
        back = read_sketch(path)
        assert (back.width, back.height, back.n_s, back.seed) == (32, 32, 4, 12)
        assert back.source_tag == J.source_tag
        assert back.entries.dtype == np.float64
        assert np.array_equal(back.entries, J.entries.astype(np.float32).astype(np.float64))

    def test_unicode_tag_round_trip(self, tmp_path):
        path = str(tmp_path / "j.skj")
        J = self._sample()
        tagged = SketchedJacobian(
            entries=J.entries, width=J.width, height=J.height, seed=J.seed, source_tag="probe é"
        )
        write_sketch(path, tagged)
        assert read_sketch(path).source_tag == "probe é"

    def test_corruption_is_rejected(self, tmp_path):
        path = str(tmp_path / "j.skj")
        write_sketch(path, self._sample())
        with open(path, "rb") as fh:
            data = bytearray(fh.read())

        def write_variant(mutate):
            bad = bytearray(data)
            mutate(bad)
            p = str(tmp_path / "bad.skj")
            with open(p, "wb") as fh:
                fh.write(bytes(bad))
            return p

        with pytest.raises(FormatError):
            read_sketch(write_variant(lambda b: b.__setitem__(slice(0, 4), b"XKJ1")))
        with pytest.raises(FormatError):
            read_sketch(write_variant(lambda b: b.__setitem__(4, 9)))
        with pytest.raises(FormatError):
            read_sketch(write_variant(lambda b: struct.pack_into("<I", b, 5, 60)))
        with pytest.raises(FormatError):
            read_sketch(write_variant(lambda b: b.extend(b"\x00\x00")))
        with pytest.raises(FormatError):
            read_sketch(write_variant(lambda b: b.__delitem__(slice(-8, None))))
        short = str(tmp_path / "short.skj")
        with open(short, "wb") as fh:
            fh.write(b"SKJ1")
        with pytest.raises(FormatError):
            read_sketch(short)

    def test_jacobian_grid_validation(self):
        with pytest.raises(ValueError):
            SketchedJacobian(
                entries=np.zeros((2, 100)), width=10, height=10, seed=0, source_tag="t"
            )
        with pytest.raises(ValueError):
            SketchedJacobian(
                entries=np.zeros((2, 100)), width=16, height=16, seed=0, source_tag="t"
            )
