import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malleable.grid import ProcGrid
from malleable.redist import (
    BlockClass,
    BlockCyclicLayout,
    CostParams,
    OutOfRange,
    RedistError,
    RedistSchedule,
    ScheduleMismatch,
    Transfer,
    block_owner,
    execute,
    execute_stores,
    gather,
    redist_cost,
    schedule_1d,
    schedule_2d,
    schedule_for,
    schedule_via_root,
)


def owner_oracle(block, grid):
    return (block[0] % grid.rows, block[1] % grid.cols)


def min_edge_colors(edges):
    """Smallest k admitting a proper edge colouring, by exhaustive backtracking."""
    if not edges:
        return 0
    for k in itertools.count(1):
        colour = [None] * len(edges)

        def ok(i, c):
            u, v = edges[i]
            return all(not (colour[j] == c and (edges[j][0] == u or edges[j][1] == v)) for j in range(i))

        def place(i):
            if i == len(edges):
                return True
            for c in range(k):
                if ok(i, c):
                    colour[i] = c
                    if place(i + 1):
                        return True
            colour[i] = None
            return False

        if place(0):
            return k


def moving_pairs_1d(p, q):
    lcm = math.lcm(p, q)
    return [(k % p, k % q) for k in range(lcm) if k % p != k % q]


# -- layout


def test_block_owner_examples():
    lay = BlockCyclicLayout((64, 64), (4, 4), ProcGrid(2, 3))
    assert block_owner((0, 0), lay) == (0, 0)
    assert block_owner((5, 7), lay) == (1, 1)
    big = BlockCyclicLayout((12 * 8, 5 * 8), (8, 8), ProcGrid(4, 5))
    assert block_owner((11, 4), big) == owner_oracle((11, 4), ProcGrid(4, 5)) == (3, 4)


def test_block_owner_out_of_range():
    lay = BlockCyclicLayout((10, 10), (4, 4), ProcGrid(2, 2))
    assert lay.block_grid == (3, 3)
    with pytest.raises(OutOfRange):
        block_owner((3, 0), lay)
    with pytest.raises(OutOfRange):
        block_owner((0, -1), lay)


def test_ragged_blocks_cover_array():
    lay = BlockCyclicLayout((10, 7), (4, 3), ProcGrid(2, 2))
    sizes = sum(
        (s0.stop - s0.start) * (s1.stop - s1.start)
        for i in range(3) for j in range(3)
        for s0, s1 in [lay.block_slices((i, j))]
    )
    assert sizes == 70


# -- 1-D schedules


def test_schedule_1d_identity_is_empty():
    assert schedule_1d(3, 3).is_empty


def test_schedule_1d_two_to_three():
    s = schedule_1d(2, 3)
    pairs = sorted((t.src[1], t.dst[1]) for t in s.transfers())
    assert pairs == sorted([(0, 2), (1, 0), (0, 1), (1, 2)])
    assert len(s) == 2 == min_edge_colors(moving_pairs_1d(2, 3))


def test_schedule_1d_four_to_six():
    s = schedule_1d(4, 6)
    edges = moving_pairs_1d(4, 6)
    assert len(edges) == 8
    assert len(s) == min_edge_colors(edges) == 2
    assert len(s) <= 3


@pytest.mark.parametrize("p,q", [(p, q) for p in range(1, 6) for q in range(1, 6)])
def test_schedule_1d_step_count_is_optimal(p, q):
    edges = moving_pairs_1d(p, q)
    assert len(schedule_1d(p, q)) == min_edge_colors(edges)


@pytest.mark.parametrize("p,q", [(p, q) for p in range(1, 13) for q in range(1, 13)])
def test_schedule_1d_contract(p, q):
    s = schedule_1d(p, q)
    lcm = math.lcm(p, q)
    degree = {}
    for a, b in moving_pairs_1d(p, q):
        degree[("s", a)] = degree.get(("s", a), 0) + 1
        degree[("d", b)] = degree.get(("d", b), 0) + 1
    assert len(s) == max(degree.values(), default=0)
    assert len(s) <= max(lcm // p, lcm // q)
    for step in s.steps:
        assert len({t.src for t in step}) == len(step)
        assert len({t.dst for t in step}) == len(step)
    classes = sorted(t.blocks.col_res for t in s.transfers())
    assert classes == [k for k in range(lcm) if k % p != k % q]
    for t in s.transfers():
        k = t.blocks.col_res
        assert t.blocks.col_mod == lcm and t.src == (0, k % p) and t.dst == (0, k % q)


# -- 2-D schedules


def test_schedule_2d_identity():
    assert schedule_2d(ProcGrid(2, 2), ProcGrid(2, 2)).is_empty


def test_schedule_2d_lifts_column_schedule():
    s = schedule_2d(ProcGrid(2, 2), ProcGrid(2, 4))
    assert all(t.src[0] == t.dst[0] for t in s.transfers())
    assert sorted((t.src, t.dst) for t in s.transfers()) == sorted(
        ((i, a), (i, b)) for i in range(2) for a, b in moving_pairs_1d(2, 4))
    assert s.blocks_shipped((8, 8)) == 32


def _moving_blocks_oracle(src, dst, bgrid):
    return {
        (i, j): (owner_oracle((i, j), src), owner_oracle((i, j), dst))
        for i in range(bgrid[0]) for j in range(bgrid[1])
        if owner_oracle((i, j), src) != owner_oracle((i, j), dst)
    }


@pytest.mark.parametrize("src,dst", [("1x2", "2x2"), ("2x2", "2x4"), ("2x3", "3x2"), ("4x1", "1x4"), ("3x3", "2x5")])
def test_schedule_2d_covers_exactly_moving_blocks(src, dst):
    a, b = ProcGrid.parse(src), ProcGrid.parse(dst)
    bgrid = (8, 8)
    shipped = {}
    for t in schedule_2d(a, b).transfers():
        for blk in t.blocks.blocks(bgrid):
            assert blk not in shipped
            shipped[blk] = (t.src, t.dst)
    assert shipped == _moving_blocks_oracle(a, b, bgrid)


def _shapes(limit):
    return [ProcGrid(r, c) for r in range(1, limit + 1) for c in range(1, limit // r + 1)]


def test_schedule_2d_contention_free_up_to_16():
    for a in _shapes(16):
        for b in _shapes(16):
            for step in schedule_2d(a, b).steps:
                assert len({t.src for t in step}) == len(step)
                assert len({t.dst for t in step}) == len(step)


# -- via root


def test_via_root_trivial():
    assert schedule_via_root(ProcGrid(1, 1), ProcGrid(1, 1)).is_empty


def test_via_root_two_procs():
    s = schedule_via_root(ProcGrid(1, 2), ProcGrid(1, 2))
    assert len(s) == 2
    (gather_t,), (scatter_t,) = s.steps
    assert (gather_t.src, gather_t.dst) == ((0, 1), (0, 0))
    assert (scatter_t.src, scatter_t.dst) == ((0, 0), (0, 1))
    assert gather_t.blocks.count((2, 2)) == 2 and scatter_t.blocks.count((2, 2)) == 2


def test_via_root_never_ships_less():
    shapes = _shapes(16)
    shapes = [g for g in shapes if g.rows <= 4 and g.cols <= 4]
    bgrid = (12, 12)
    for a in shapes:
        for b in shapes:
            if a == b:
                continue
            direct = schedule_2d(a, b).blocks_shipped(bgrid)
            assert schedule_via_root(a, b).blocks_shipped(bgrid) >= direct
            assert direct == len(_moving_blocks_oracle(a, b, bgrid))


# -- execution


def _layouts(src, dst, dims=(24, 24), block=(2, 2)):
    return BlockCyclicLayout(dims, block, src), BlockCyclicLayout(dims, block, dst)


def test_execute_identity():
    a = np.arange(36.0).reshape(6, 6)
    la, lb = _layouts(ProcGrid(2, 2), ProcGrid(2, 2), (6, 6), (1, 1))
    stores, stats = execute(a, la, lb, schedule_2d(la.grid, lb.grid))
    assert np.array_equal(gather(stores, lb), a)
    assert stats.total_bytes == 0


def test_execute_one_by_two_to_one_by_three():
    a = np.arange(36).reshape(6, 6)
    la, lb = _layouts(ProcGrid(1, 2), ProcGrid(1, 3), (6, 6), (1, 1))
    stores, _ = execute(a, la, lb, schedule_2d(la.grid, lb.grid))
    for proc, blocks in stores.items():
        for (r, c), data in blocks.items():
            assert proc == (0, c % 3)
            assert data[0, 0] == a[r, c]
    assert sum(len(b) for b in stores.values()) == 36


def test_execute_round_trip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 18))
    la, lb = _layouts(ProcGrid(2, 3), ProcGrid(3, 4), (20, 18), (3, 2))
    from malleable.redist import scatter
    original = scatter(a, la)
    there, _ = execute(a, la, lb, schedule_2d(la.grid, lb.grid))
    back, _ = execute_stores(there, lb, la, schedule_2d(lb.grid, la.grid))
    assert original.keys() == back.keys()
    for p in original:
        assert original[p].keys() == back[p].keys()
        for blk in original[p]:
            assert np.array_equal(original[p][blk], back[p][blk])


def test_execute_via_root_matches_direct():
    a = np.arange(100.0).reshape(10, 10)
    la, lb = _layouts(ProcGrid(2, 2), ProcGrid(1, 3), (10, 10), (2, 2))
    direct, dstats = execute(a, la, lb, schedule_2d(la.grid, lb.grid))
    rooted, rstats = execute(a, la, lb, schedule_via_root(la.grid, lb.grid))
    assert np.array_equal(gather(direct, lb), gather(rooted, lb))
    assert rstats.total_bytes >= dstats.total_bytes
    assert direct.keys() == rooted.keys()


def test_execute_stats_per_step_max():
    a = np.zeros((8, 8))
    la, lb = _layouts(ProcGrid(1, 2), ProcGrid(1, 4), (8, 8), (1, 1))
    s = schedule_2d(la.grid, lb.grid)
    _, stats = execute(a, la, lb, s)
    assert len(stats.step_bytes) == len(s)
    assert stats.total_bytes == 32 * 8  # half the 64 blocks move
    assert max(stats.step_bytes) <= stats.total_bytes


def test_execute_schedule_mismatch():
    a = np.zeros((4, 4))
    la, lb = _layouts(ProcGrid(1, 2), ProcGrid(2, 2), (4, 4), (1, 1))
    with pytest.raises(ScheduleMismatch):
        execute(a, la, lb, schedule_2d(ProcGrid(1, 2), ProcGrid(1, 4)))
    other = BlockCyclicLayout((4, 4), (2, 2), ProcGrid(2, 2))
    with pytest.raises(ScheduleMismatch):
        execute(a, la, other, schedule_2d(la.grid, other.grid))


def test_execute_rejects_missing_block():
    a = np.zeros((4, 4))
    la, lb = _layouts(ProcGrid(1, 2), ProcGrid(1, 2), (4, 4), (1, 1))
    bogus = RedistSchedule(la.grid, lb.grid, ((Transfer((0, 0), (0, 1), BlockClass(0, 1, 1, 2)),),))
    with pytest.raises(RedistError):
        execute(a, la, lb, bogus)


grids = st.builds(ProcGrid, st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=60, deadline=None)
@given(grids, grids, st.integers(1, 13), st.integers(1, 13), st.integers(1, 3), st.integers(1, 3))
def test_execute_places_by_owner_and_conserves(src, dst, nr, nc, br, bc):
    dims = (nr * br - (br > 1), nc * bc)
    rng = np.random.default_rng(nr * 100 + nc)
    a = rng.integers(0, 1000, size=dims)
    la, lb = _layouts(src, dst, dims, (br, bc))
    stores, _ = execute(a, la, lb, schedule_for(src, dst))
    values = []
    for proc, blocks in stores.items():
        for blk, data in blocks.items():
            assert proc == owner_oracle(blk, dst)
            assert np.array_equal(data, a[la.block_slices(blk)])
            values.extend(data.ravel().tolist())
    assert sorted(values) == sorted(a.ravel().tolist())


# -- cost model


def test_cost_empty():
    lay = BlockCyclicLayout((64, 64), (64, 64), ProcGrid(1, 1))
    assert redist_cost(schedule_2d(ProcGrid(2, 2), ProcGrid(2, 2)), lay) == 0.0


def test_cost_single_step_arithmetic():
    lay = BlockCyclicLayout((100 * 64, 64), (64, 64), ProcGrid(1, 1))
    s = RedistSchedule(ProcGrid(1, 2), ProcGrid(1, 2), ((Transfer((0, 0), (0, 1), BlockClass(0, 1, 0, 1)),),))
    params = CostParams(latency_per_step=1e-3, bandwidth=1e8, element_size=8)
    assert redist_cost(s, lay, params) == pytest.approx(0.001 + 100 * 64 * 64 * 8 / 1e8, rel=1e-12)
    assert redist_cost(s, lay, params) == pytest.approx(0.033768, rel=1e-12)


def test_cost_via_root_multiplier():
    lay = BlockCyclicLayout((256, 256), (64, 64), ProcGrid(2, 2))
    s = schedule_via_root(ProcGrid(2, 2), ProcGrid(2, 4))
    one = redist_cost(s, lay, CostParams(via_root_multiplier=1.0))
    assert redist_cost(s, lay, CostParams(via_root_multiplier=3.0)) == pytest.approx(3 * one)


def test_cost_decreases_along_8000_ladder():
    from malleable.grid import enumerate_configs
    ladder = enumerate_configs(8000, 40).configs
    costs = [
        redist_cost(schedule_2d(a, b), BlockCyclicLayout((8000, 8000), (64, 64), a))
        for a, b in zip(ladder, ladder[1:])
    ]
    assert all(later <= earlier for earlier, later in zip(costs[2:], costs[3:]))


def test_cost_params_validation():
    with pytest.raises(RedistError):
        CostParams(bandwidth=0)
    with pytest.raises(RedistError):
        CostParams(via_root_multiplier=0.5)


def test_destination_table_layout():
    table = schedule_1d(2, 3).table().splitlines()
    assert table[0].split() == ["step", "0", "1"]
    assert len(table) == 3
    rows = [line.split()[1:] for line in table[1:]]
    sent = sorted((str(src), dst) for row in rows for src, dst in enumerate(row) if dst != "-")
    assert sent == sorted([("0", "2"), ("1", "0"), ("0", "1"), ("1", "2")])
