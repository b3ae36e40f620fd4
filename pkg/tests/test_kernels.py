import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperstab import (
    CascadeMatrix,
    Grid,
    HyperbolicSystem,
    Profile,
    build_kernel,
    build_z_source,
    eval_kernel,
    kernel_oracle_solve,
    kernel_residual,
)
from hyperstab.kernels import read_kernel_tables_csv, write_kernel_tables_csv


def sq_profile():
    return Profile.poly(0.0, 0.0, 1.0)  # x^2: smooth, flat at the inflow corner


class TestCascadeStructure:
    def test_diagonal_and_above_rejected(self):
        with pytest.raises(ValueError):
            CascadeMatrix(3, 2, {(2, 2): Profile.constant(1)})
        with pytest.raises(ValueError):
            CascadeMatrix(3, 2, {(1, 1): Profile.constant(1)})
        with pytest.raises(ValueError):
            CascadeMatrix(4, 2, {(3, 3): Profile.constant(1)})

    def test_lower_block_allowed(self):
        g = CascadeMatrix(4, 2, {(2, 1): Profile.constant(1),
                                 (3, 2): Profile.constant(2),
                                 (4, 1): Profile.constant(3)})
        assert g.entry(2, 1) is not None
        assert g.entry(3, 1) is None

    def test_z_source_keeps_lower_block(self, s3_cascade):
        zsrc = build_z_source(s3_cascade)
        assert zsrc.mode == "z"
        assert set(zsrc.matrix.entries) == {(3, 1), (3, 2)}

    def test_z_source_zero_upper_rows(self):
        g = CascadeMatrix(4, 3, {(2, 1): Profile.constant(1),
                                 (3, 2): Profile.constant(1),
                                 (4, 2): Profile.constant(5)})
        zsrc = build_z_source(g)
        assert all(i > 3 for (i, _) in zsrc.matrix.entries)

    def test_zero_maps_to_zero(self):
        zsrc = build_z_source(CascadeMatrix(3, 2, {}))
        assert zsrc.matrix.entries == {}


class TestEvalKernel:
    def test_s3_indicator_value(self, s3_system, s3_cascade):
        grid = Grid(64)
        # speeds (-2, -1): support is x >= y/2, value 1/2 inside
        assert eval_kernel(s3_system, s3_cascade, 2, 1, 0.6, 0.4, grid) == pytest.approx(0.5, abs=1e-12)
        assert eval_kernel(s3_system, s3_cascade, 2, 1, 0.2, 0.4, grid) == pytest.approx(0.5, abs=1e-12)
        assert eval_kernel(s3_system, s3_cascade, 2, 1, 0.1, 0.4, grid) == 0.0

    def test_s3_node_table_matches_indicator(self, s3_system, s3_cascade):
        grid = Grid(32)
        kern = build_kernel(s3_system, s3_cascade, grid)
        x = grid.nodes
        expect = np.where(x[:, None] >= x[None, :] / 2, 0.5, 0.0)
        expect[0, 0] = 0.0  # inflow corner owned by the x = 0 condition
        assert np.max(np.abs(kern.tables[(2, 1)] - expect)) <= 1e-12

    def test_linear_coefficient_value(self, s3_system):
        g = CascadeMatrix(3, 2, {(2, 1): Profile.affine(0, 1)})
        assert eval_kernel(s3_system, g, 2, 1, 1.0, 1.0, Grid(64)) == pytest.approx(0.25, abs=1e-12)

    def test_outside_support_zero(self, s3_system):
        g = CascadeMatrix(3, 2, {(2, 1): sq_profile()})
        grid = Grid(32)
        xs = np.array([0.0, 0.1, 0.2])
        ys = np.array([0.5, 0.6, 0.9])
        assert np.all(eval_kernel(s3_system, g, 2, 1, xs, ys, grid) == 0.0)

    def test_index_range_rejected(self, s3_system, s3_cascade):
        grid = Grid(16)
        for (i, j) in ((1, 1), (2, 2), (3, 1), (2, 0)):
            with pytest.raises(ValueError):
                eval_kernel(s3_system, s3_cascade, i, j, 0.5, 0.5, grid)

    @given(c=st.floats(-4, 4, allow_nan=False))
    @settings(max_examples=20, deadline=None)
    def test_scaling_linearity(self, c):
        sys_ = HyperbolicSystem(
            3, 2,
            (Profile.constant(-2), Profile.constant(-1), Profile.constant(1)),
            np.array([[1.0, 1.0]]),
        )
        grid = Grid(16)
        base = CascadeMatrix(3, 2, {(2, 1): Profile.affine(0.5, 1.0)})
        scaled = CascadeMatrix(3, 2, {(2, 1): Profile.affine(0.5 * c, 1.0 * c)})
        xx, yy = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
        t1 = eval_kernel(sys_, base, 2, 1, xx, yy, grid)
        tc = eval_kernel(sys_, scaled, 2, 1, xx, yy, grid)
        assert np.max(np.abs(tc - c * t1)) <= 1e-12 * max(1.0, abs(c))

    def test_support_interval_reaches_right_edge(self):
        sys_ = HyperbolicSystem(
            3, 2,
            (Profile.affine(-2, -0.5), Profile.affine(-1, -0.25), Profile.constant(1)),
            np.array([[1.0, 1.0]]),
        )
        g = CascadeMatrix(3, 2, {(2, 1): Profile.constant(1)})
        kern = build_kernel(sys_, g, Grid(32))
        mask = kern.masks[(2, 1)]
        # for each y, the supported x set is a trailing interval ending at x=1
        for q in range(mask.shape[1]):
            col = mask[:, q]
            assert col[-1]
            first = np.argmax(col)
            assert np.all(col[first:])

    def test_first_row_empty(self, s3_system, s3_cascade):
        kern = build_kernel(s3_system, s3_cascade, Grid(16))
        assert all(i >= 2 for (i, _) in kern.tables)


class TestOracle:
    def test_zero_source_zero_tables(self, s3_system):
        tabs = kernel_oracle_solve(s3_system, CascadeMatrix(3, 2, {}), Grid(16))
        assert tabs == {}

    def test_imposed_data_row(self, s3_system, s3_cascade):
        grid = Grid(32)
        tabs = kernel_oracle_solve(s3_system, s3_cascade, grid)
        # y = 0 column holds -g(x)/lambda_1(0) bitwise, corner included
        expect = np.ones(grid.n_nodes) / 2.0
        assert np.array_equal(tabs[(2, 1)][:, 0], expect)

    def test_jump_case_matches_away_from_interface(self, s3_system, s3_cascade):
        # constant coefficient: the kernel jumps across phi_2(x) = phi_1(y);
        # the march smears the jump but must match to O(dx) elsewhere
        grid = Grid(256)
        tabs = kernel_oracle_solve(s3_system, s3_cascade, grid)
        kern = build_kernel(s3_system, s3_cascade, grid)
        diff = np.abs(tabs[(2, 1)] - kern.tables[(2, 1)])
        xx, yy = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
        far = np.abs(xx - yy / 2) >= 0.15
        assert diff[far].max() <= 0.5 * grid.dx
        # smeared-jump layer keeps the mean gap at the half-order scale
        assert diff.mean() <= 0.25 * np.sqrt(grid.dx)

    def test_smooth_convergence_constant_speeds(self, s3_system):
        g = CascadeMatrix(3, 2, {(2, 1): sq_profile()})
        gaps = []
        for n_cells in (64, 128, 256):
            grid = Grid(n_cells)
            tab = kernel_oracle_solve(s3_system, g, grid)[(2, 1)]
            ref = build_kernel(s3_system, g, grid).tables[(2, 1)]
            gaps.append(np.abs(tab - ref).max())
        orders = [np.log2(a / b) for a, b in zip(gaps, gaps[1:])]
        assert min(orders) >= 0.8
        assert gaps[-1] <= 0.25 / 256

    def test_smooth_convergence_affine_speeds(self):
        sys_ = HyperbolicSystem(
            3, 2,
            (Profile.affine(-2, -0.5), Profile.affine(-1, -0.25), Profile.constant(1)),
            np.array([[1.0, 1.0]]),
        )
        g = CascadeMatrix(3, 2, {(2, 1): sq_profile()})
        gaps = []
        for n_cells in (64, 128, 256):
            grid = Grid(n_cells)
            tab = kernel_oracle_solve(sys_, g, grid)[(2, 1)]
            ref = build_kernel(sys_, g, grid).tables[(2, 1)]
            gaps.append(np.abs(tab - ref).max())
        orders = [np.log2(a / b) for a, b in zip(gaps, gaps[1:])]
        assert min(orders) >= 0.8


class TestResidual:
    def test_eval_tables_satisfy_identity(self, s3_system):
        g = CascadeMatrix(3, 2, {(2, 1): sq_profile()})
        grid = Grid(128)
        kern = build_kernel(s3_system, g, grid)
        res = kernel_residual(s3_system, g, kern, grid)[(2, 1)]
        assert res.interior_max <= 0.5 * grid.dx
        assert res.boundary_x0_max == 0.0
        assert res.boundary_y0_max <= 1e-12

    def test_affine_speed_residual_first_order(self):
        sys_ = HyperbolicSystem(
            3, 2,
            (Profile.affine(-2, -0.5), Profile.affine(-1, -0.25), Profile.constant(1)),
            np.array([[1.0, 1.0]]),
        )
        g = CascadeMatrix(3, 2, {(2, 1): sq_profile()})
        grid = Grid(128)
        kern = build_kernel(sys_, g, grid)
        res = kernel_residual(sys_, g, kern, grid)[(2, 1)]
        assert res.interior_max <= 0.5 * grid.dx
        assert res.boundary_x0_max == 0.0
        assert res.boundary_y0_max <= 1e-12

    def test_zero_source_zero_residuals(self, s3_system):
        g = CascadeMatrix(3, 2, {})
        grid = Grid(32)
        kern = build_kernel(s3_system, g, grid)
        assert kernel_residual(s3_system, g, kern, grid) == {}


def test_csv_round_trip(tmp_path, s3_system, s3_cascade):
    grid = Grid(16)
    kern = build_kernel(s3_system, s3_cascade, grid)
    path = tmp_path / "kernel.csv"
    write_kernel_tables_csv(kern.tables, grid, path)
    header = path.read_text().splitlines()[0]
    assert header == "i,j,x,y,value"
    back = read_kernel_tables_csv(path, grid)
    assert set(back) == set(kern.tables)
    for key in back:
        assert np.array_equal(back[key], kern.tables[key])
