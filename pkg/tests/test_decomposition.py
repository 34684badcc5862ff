import json

import numpy as np
import pytest

from hlamkit import GridSpec, PlanningError, Stencil, generate, plan_colors, plan_ranks, plan_tasks, split
from hlamkit.decomposition import DEP_GAP_THRESHOLD, local_system


def check_split(n, parts, simd, blocks):
    assert len(blocks) == parts
    assert sum(s for _, s in blocks) == n
    pos = 0
    for start, size in blocks:
        assert start == pos and size >= 0
        pos += size
    # every start is SIMD-aligned (the tail only ever extends the last block)
    assert all(start % simd == 0 for start, _ in blocks)
    body = [s for _, s in blocks[:-1]]
    if body:
        assert max(body) - min(body) <= simd
        assert blocks[-1][1] >= min(body) - simd
    full = -(-n // simd)
    if parts <= full:
        assert all(s > 0 for _, s in blocks)


def test_split_examples():
    assert split(32, 4, 8) == [(0, 8), (8, 8), (16, 8), (24, 8)]
    check_split(100, 4, 8, split(100, 4, 8))
    blocks = split(7, 8, 8)
    assert blocks[-1] == (0, 7) or blocks[0] == (0, 7)
    assert sorted(s for _, s in blocks) == [0] * 7 + [7]


@pytest.mark.slow
def test_split_contract_exhaustive():
    for simd in (1, 4, 8, 16):
        for parts in range(1, 65):
            for n in range(0, 10001):
                check_split(n, parts, simd, split(n, parts, simd))


def test_split_rejects_bad_args():
    with pytest.raises(ValueError):
        split(-1, 2)
    with pytest.raises(ValueError):
        split(10, 0)


def test_plan_ranks_7pt_two_ranks():
    plan = plan_ranks(GridSpec(4, 4, 8), 2)
    for info in plan.ranks:
        assert info.n_local == 64
        assert len(info.send_map) == 1 and info.halo_size == 16
        (q, rows), = info.send_map.items()
        assert rows.size == 16
        assert info.recv_map[q] == (16, 64)


def test_plan_ranks_27pt_sends_whole_plane():
    plan = plan_ranks(GridSpec(4, 4, 8, Stencil.TWENTY_SEVEN), 2)
    assert np.array_equal(plan[0].send_map[1], np.arange(48, 64))
    assert np.array_equal(plan[1].send_map[0], np.arange(0, 16))


def test_plan_ranks_single_and_errors():
    plan = plan_ranks(GridSpec(3, 3, 3), 1)
    assert plan[0].send_map == {} and plan[0].recv_map == {} and plan[0].halo_size == 0
    with pytest.raises(PlanningError):
        plan_ranks(GridSpec(3, 3, 3), 4)


@pytest.mark.parametrize("stencil", [7, 27])
@pytest.mark.parametrize("ranks", [2, 3, 5])
def test_plan_invariants(stencil, ranks):
    grid = GridSpec(3, 4, 5, Stencil.parse(stencil))
    plan = plan_ranks(grid, ranks)
    pos = 0
    for info in plan.ranks:
        assert info.row_start == pos and info.row_start % grid.plane_size == 0
        pos = info.row_stop
        offsets = []
        for q, rows in info.send_map.items():
            assert np.all((rows >= 0) & (rows < info.n_local))
            assert plan[q].recv_map[info.rank][0] == rows.size
        for q, (count, off) in sorted(info.recv_map.items()):
            offsets.append((off, count))
            assert info.send_map.get(q) is not None or plan[q].send_map[info.rank].size == count
        expect = info.n_local
        for off, count in offsets:
            assert off == expect
            expect += count
    assert pos == grid.nrows
    assert json.loads(plan.to_json())["rank_count"] == ranks


def test_local_spmv_matches_global_bit_exact():
    from hlamkit import kernels as K

    for stencil in (7, 27):
        s = generate(GridSpec(4, 3, 8, Stencil.parse(stencil)))
        x = np.random.default_rng(5).standard_normal(s.nrows)
        y = np.zeros(s.nrows)
        K.spmv(s.matrix, x, y)
        for ranks in (1, 2, 4, 8):
            plan = plan_ranks(s.grid, ranks, s.matrix)
            out = []
            for q in range(ranks):
                loc = local_system(s, plan, q)
                xl = np.concatenate([x[loc.info.row_start:loc.info.row_stop], x[loc.info.external_cols]])
                yl = np.zeros(loc.n_local)
                K.spmv(loc.matrix, xl, yl)
                out.append(yl)
            assert np.array_equal(np.concatenate(out), y)


def test_plan_tasks_examples():
    A = generate(GridSpec(3, 3, 3)).matrix
    one = plan_tasks(A, 1, 1)
    assert one.spmv_deps == [[(0, 27)]]
    three = plan_tasks(A, 3, 1)
    assert three.blocks == [(0, 9), (9, 9), (18, 9)]
    cols = set()
    for off, ln in three.spmv_deps[1]:
        cols.update(range(off, off + ln))
    assert {0, 8, 9, 17, 18, 26} <= cols
    assert cols <= set(range(27))


def test_spmv_deps_cover_and_are_minimal():
    A = generate(GridSpec(40, 6, 4, Stencil.TWENTY_SEVEN)).matrix
    tp = plan_tasks(A, 7, 8)
    for (start, size), deps in zip(tp.blocks, tp.spmv_deps):
        used = set(np.unique(A.col_idx[A.row_ptr[start]:A.row_ptr[start + size]]).tolist())
        covered = set()
        for off, ln in deps:
            region = set(range(off, off + ln))
            assert off in used and off + ln - 1 in used
            gaps = sorted(region - used)
            # unused columns inside a region come in runs of at most the threshold
            run = 0
            for a, b in zip([None] + gaps, gaps):
                run = run + 1 if a is not None and b == a + 1 else 1
                assert run <= DEP_GAP_THRESHOLD
            covered |= region
        assert used <= covered


def test_plan_colors():
    tp = plan_tasks(generate(GridSpec(4, 4, 4)).matrix, 4, 1)
    assert plan_colors(tp, 2).colors == [0, 1, 0, 1]
    assert plan_colors(tp, 1).colors == [0, 0, 0, 0]
    tp5 = plan_tasks(generate(GridSpec(5, 1, 1)).matrix, 5, 1)
    assert plan_colors(tp5, 3).colors == [0, 1, 2, 0, 1]
    assert plan_colors(tp, 2).tasks_of(1) == [1, 3]
    with pytest.raises(PlanningError):
        plan_colors(tp, 0)
