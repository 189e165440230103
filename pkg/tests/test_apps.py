import random

import pytest

from gridfix.core import ArraySchema, ChunkedArray, Dim, diff_count, dump_text
from gridfix.errors import BadParams, TooFewPoints

from gridfix.apps import (
    BACKGROUND,
    array_hash,
    assign_random,
    bench_sigmaclip,
    coadd,
    generate_images,
    generate_mask,
    initial_labels,
    kmeans_run,
    label_seed,
    linear_index,
    run_sigmaclip,
    run_sourcedetect,
    sigmaclip_spec,
    sourcedetect_spec,
)
from oracles import clip_oracle, component_labels, lloyd_oracle


def stack(cells, shape=(4, 4, 4)):
    nx, ny, nt = shape
    schema = ArraySchema(
        (Dim("x", 0, nx - 1), Dim("y", 0, ny - 1), Dim("t", 0, nt - 1)),
        (("d", "float64"),),
        (min(nx, 4), min(ny, 4), min(nt, 4)),
    )
    a = ChunkedArray(schema)
    for coord, v in cells.items():
        a.set(coord, (float(v),))
    return a


class TestSigmaClip:
    def test_equal_column_stable(self):
        a = stack({(0, 0, t): 5 for t in range(3)})
        final, trace = run_sigmaclip(a, 3.0)
        assert len(trace) == 1
        assert diff_count(final, a) == 0

    def test_column_with_outlier(self):
        a = stack({(0, 0, t): v for t, v in enumerate([1, 1, 1, 10])})
        final, trace = run_sigmaclip(a, 1.0)
        assert final.coords() == {(0, 0, t) for t in range(3)}

    def test_empty_input(self):
        final, trace = run_sigmaclip(stack({}), 2.0)
        assert final.cell_count() == 0 and trace[0].changed_cells == 0

    def test_invalid_k(self):
        with pytest.raises(BadParams):
            sigmaclip_spec(0)
        with pytest.raises(BadParams):
            run_sigmaclip(stack({}), 2.0, "turbo")

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_bruteforce_oracle(self, seed):
        rng = random.Random(seed)
        cells = {
            (x, y, t): rng.randrange(0, 40)
            for x in range(4)
            for y in range(4)
            for t in range(6)
        }
        a = stack(cells, (4, 4, 6))
        final, _ = run_sigmaclip(a, 1.5)
        expected = clip_oracle(cells, 1.5)
        assert final.coords() == set(expected)
        for coord, v in expected.items():
            assert final.get(coord) == (float(v),)

    def test_survivors_shrink_monotonically(self):
        a = generate_images(11, 12, 12, 12, n_sources=1, noise=2)
        _, trace = run_sigmaclip(a, 2.0)
        changes = [r.changed_cells for r in trace]
        # clipping only deletes, so the per-iteration removal counts can
        # never grow, and the final iteration removes nothing
        assert changes[-1] == 0
        assert all(
            changes[i] >= changes[i + 1] for i in range(len(changes) - 1)
        )

    def test_manual_strategy_matches(self):
        a = generate_images(4, 10, 10, 8, n_sources=2, noise=3)
        ref, _ = run_sigmaclip(a, 2.0, "naive")
        manual, _ = run_sigmaclip(a, 2.0, "manual-incr")
        assert diff_count(ref, manual) == 0


class TestCoadd:
    def test_two_term_sum(self):
        out = coadd(stack({(0, 0, 0): 1, (0, 0, 1): 2}))
        assert out.get((0, 0)) == (3.0,)
        assert out.cell_count() == 1

    def test_excludes_clipped_cells(self):
        a = stack({(0, 0, t): v for t, v in enumerate([1, 1, 1, 10])})
        clipped, _ = run_sigmaclip(a, 1.0)
        assert coadd(clipped).get((0, 0)) == (3.0,)
        assert coadd(a).get((0, 0)) == (13.0,)

    def test_empty(self):
        assert coadd(stack({})).cell_count() == 0

    def test_linearity_over_disjoint_slices(self):
        a = stack({(0, 0, 0): 3, (1, 1, 0): 4})
        b = stack({(0, 0, 1): 5})
        both = stack({(0, 0, 0): 3, (1, 1, 0): 4, (0, 0, 1): 5})
        ca, cb, cboth = coadd(a), coadd(b), coadd(both)
        for coord, tup in cboth.nonempty_cells():
            va = ca.get(coord)
            vb = cb.get(coord)
            total = (va[0] if va else 0.0) + (vb[0] if vb else 0.0)
            assert tup == (total,)


class TestSourceDetect:
    def test_adjacent_pair_takes_min(self):
        a = label_seed(4, 4, [(0, 0), (0, 1)])
        a.set((0, 0), (7,))
        a.set((0, 1), (4,))
        final, _, _ = run_sourcedetect(a)
        assert final.get((0, 0)) == (4,)
        assert final.get((0, 1)) == (4,)

    def test_diagonal_counts_as_adjacent(self):
        a = label_seed(4, 4, [(0, 0), (1, 1)])
        final, _, _ = run_sourcedetect(a)
        assert final.get((1, 1)) == final.get((0, 0))

    def test_r2_bridges_gaps(self):
        a = label_seed(8, 8, [(0, 0), (2, 0)])
        final_r1, _, _ = run_sourcedetect(a, 1)
        assert final_r1.get((2, 0)) != final_r1.get((0, 0))
        final_r2, _, _ = run_sourcedetect(a, 2)
        assert final_r2.get((2, 0)) == final_r2.get((0, 0))

    def test_invalid_radius(self):
        with pytest.raises(BadParams):
            sourcedetect_spec(0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_union_find_oracle(self, seed):
        a = generate_mask(16, 16, seed=seed, density=0.35)
        initial = {coord: tup[0] for coord, tup in a.nonempty_cells()}
        final, _, _ = run_sourcedetect(a)
        expected = component_labels(initial, 1)
        got = {coord: tup[0] for coord, tup in final.nonempty_cells()}
        assert got == expected

    def test_initial_labels_are_row_major_ordinals(self):
        a = label_seed(4, 4, [(0, 0), (1, 2), (3, 3)])
        assert a.get((0, 0)) == (0,)
        assert a.get((1, 2)) == (6,)
        assert a.get((3, 3)) == (15,)

    def test_threshold_labeling(self):
        img = coadd(stack({(0, 0, 0): 100, (1, 1, 0): 5}))
        lab = initial_labels(img, 50.0)
        assert lab.coords() == {(0, 0)}
        assert lab.get((0, 0)) == (linear_index(lab.schema, (0, 0)),)


class TestKMeans:
    def points(self, coords):
        a = label_seed(16, 16, coords)
        return a

    def test_single_cluster_mean(self):
        a = self.points([(0, 0), (2, 0), (4, 6)])
        centroids, final, trace = kmeans_run(a, 1, seed=9)
        assert centroids == {0: (2.0, 2.0)}
        assert len(trace) <= 2
        assert {tup[0] for _, tup in final.nonempty_cells()} == {0}

    def test_two_separated_blobs(self):
        blob_a = [(0, 0), (0, 1)]
        blob_b = [(15, 15), (15, 14)]
        for seed in range(5):
            centroids, final, _ = kmeans_run(self.points(blob_a + blob_b), 2, seed=seed)
            got = {coord: tup[0] for coord, tup in final.nonempty_cells()}
            assert got[(0, 0)] == got[(0, 1)]
            assert got[(15, 15)] == got[(15, 14)]
            assert got[(0, 0)] != got[(15, 15)]

    def test_too_few_points(self):
        with pytest.raises(TooFewPoints):
            kmeans_run(self.points([(0, 0)]), 2)
        with pytest.raises(BadParams):
            kmeans_run(self.points([(0, 0)]), 0)

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_lloyd_oracle(self, seed):
        rng = random.Random(1000 + seed)
        coords = sorted(
            {(rng.randrange(16), rng.randrange(16)) for _ in range(rng.randrange(6, 20))}
        )
        k = rng.randrange(1, 5)
        if len(coords) < k:
            k = len(coords)
        a = self.points(coords)
        init = assign_random(a, k, seed=seed)
        init_assign = [tup[0] for _, tup in init.nonempty_cells()]
        centroids, final, _ = kmeans_run(a, k, seed=seed)
        expected = lloyd_oracle(coords, init_assign)
        got = [tup[0] for _, tup in final.nonempty_cells()]
        assert got == expected


class TestGenerator:
    def test_same_seed_identical_dump(self):
        a = generate_images(3, 8, 8, 4, n_sources=2, noise=2)
        b = generate_images(3, 8, 8, 4, n_sources=2, noise=2)
        assert dump_text(a) == dump_text(b)

    def test_flat_background(self):
        a = generate_images(0, 6, 6, 3, n_sources=0, noise=0)
        vals = {tup[0] for _, tup in a.nonempty_cells()}
        assert vals == {float(BACKGROUND)}

    def test_values_are_integer_floats(self):
        a = generate_images(5, 6, 6, 4)
        assert all(tup[0].is_integer() for _, tup in a.nonempty_cells())

    def test_single_source_peaks_at_center(self):
        a = generate_images(2, 9, 9, 4, n_sources=1, noise=0, outlier_rate=0.0)
        img = coadd(a)
        peak = max(img.nonempty_cells(), key=lambda kv: kv[1][0])[0]
        # the seeded center is recoverable as the brightest co-added pixel
        rng = random.Random(2)
        center = (rng.randrange(9), rng.randrange(9))
        assert peak == center

    def test_bad_params(self):
        with pytest.raises(BadParams):
            generate_images(0, 0, 4, 4)
        with pytest.raises(BadParams):
            generate_images(0, 4, 4, 4, n_sources=-1)


class TestBench:
    def test_all_strategies_agree_and_incremental_touches_less(self):
        a = generate_images(8, 16, 16, 8, n_sources=2, noise=3)
        ref_hash, results = bench_sigmaclip(a, k=2.0)
        assert set(results) == {
            "naive", "manual-incr", "efficient-incr", "efficient-incr+storage"
        }
        naive_touched = sum(r.cells_touched for r in results["naive"][0])
        eff_touched = sum(r.cells_touched for r in results["efficient-incr"][0])
        assert eff_touched < naive_touched

    def test_hash_ignores_chunking(self):
        a = label_seed(4, 4, [(0, 0)], chunk=(4, 4))
        b = label_seed(4, 4, [(0, 0)], chunk=(2, 2))
        assert array_hash(a) == array_hash(b)
