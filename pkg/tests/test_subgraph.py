import numpy as np
import pytest

from rescale_tsp.instances import Instance, generate_uniform
from rescale_tsp.subgraph import (
    build_knn,
    export_subgraph_csv,
    project_coords,
    rescale,
)


def brute_force_rows(coords, k1):
    """Oracle: full sort by (distance, index) per node."""
    n = coords.shape[0]
    out = np.empty((n, k1), dtype=np.int64)
    for i in range(n):
        d = np.hypot(*(coords - coords[i]).T)
        d = d.copy()
        order = sorted(range(n), key=lambda j: (0.0, j) if j == i else (d[j], j))
        order.remove(i)
        out[i] = [i, *order[: k1 - 1]]
    return out


class TestBuildKnn:
    def test_self_first_and_sorted(self):
        inst = generate_uniform(30, 0)
        sub = build_knn(inst, 7)
        assert np.array_equal(sub.neighbors[:, 0], np.arange(30))
        assert (np.diff(sub.raw_dist, axis=1) >= 0).all()
        assert (sub.raw_dist[:, 0] == 0).all()

    def test_collinear_endpoints_pick_middle(self):
        inst = Instance("line", [(0.0, 0.0), (0.5, 0.0), (1.0, 0.0)])
        sub = build_knn(inst, 2)
        assert list(sub.neighbors[0]) == [0, 1]
        assert list(sub.neighbors[2]) == [2, 1]
        # middle node ties between 0 and 2; lower index wins
        assert list(sub.neighbors[1]) == [1, 0]

    def test_k1_equal_n_is_permutation(self):
        inst = generate_uniform(12, 3)
        sub = build_knn(inst, 12)
        for i in range(12):
            assert sorted(sub.neighbors[i]) == list(range(12))

    def test_matches_brute_force(self):
        inst = generate_uniform(50, 7)
        sub = build_knn(inst, 8)
        oracle = brute_force_rows(inst.coords, 8)
        assert np.array_equal(sub.neighbors, oracle)

    def test_grid_matches_exact(self):
        inst = generate_uniform(400, 11)
        exact = build_knn(inst, 9, method="exact")
        grid = build_knn(inst, 9, method="grid")
        assert np.array_equal(exact.neighbors, grid.neighbors)
        assert np.array_equal(exact.raw_dist, grid.raw_dist)

    def test_rejects_bad_k1(self):
        inst = generate_uniform(10, 0)
        with pytest.raises(ValueError):
            build_knn(inst, 0)
        with pytest.raises(ValueError):
            build_knn(inst, 11)

    def test_default_k1_caps_at_50(self):
        assert build_knn(generate_uniform(20, 0)).k1 == 20
        assert build_knn(generate_uniform(80, 0)).k1 == 50


class TestRescale:
    def test_worked_example(self):
        # neighborhood spans a-range [0.2, 0.7], b-range [0.3, 0.5]
        inst = Instance("ex", [(0.2, 0.3), (0.45, 0.5), (0.7, 0.3), (0.45, 0.3)])
        sub = rescale(build_knn(inst, 4), inst)
        assert sub.mu[0] == pytest.approx(2.0, abs=1e-12)
        # an edge of raw length 0.25 doubles
        assert sub.rescaled_dist[0, 1] == pytest.approx(
            sub.raw_dist[0, 1] * 2.0, abs=1e-12
        )
        assert sub.raw_dist[3, 2] == pytest.approx(0.25, abs=1e-12)
        assert sub.rescaled_dist[3, 2] == pytest.approx(0.5, abs=1e-12)

    def test_unit_square_identity(self):
        inst = Instance("sq", [(0, 0), (0, 1), (1, 1), (1, 0), (0.5, 0.5)])
        sub = rescale(build_knn(inst, 5), inst)
        assert np.allclose(sub.mu, 1.0, atol=1e-12)
        assert np.allclose(sub.rescaled_dist, sub.raw_dist, atol=1e-12)

    def test_max_extent_exactly_one(self):
        for seed, n in ((0, 20), (1, 200), (2, 2000)):
            inst = generate_uniform(n, seed)
            sub = rescale(build_knn(inst), inst)
            nb = inst.coords[sub.neighbors]
            extents = (nb.max(axis=1) - nb.min(axis=1)) * sub.mu[:, None]
            assert np.abs(extents.max(axis=1) - 1.0).max() < 1e-12

    def test_degenerate_row_all_coincident(self):
        coords = np.array([[0.5, 0.5]] * 3 + [[0.9, 0.9]])
        inst = Instance("dg", coords)
        sub = rescale(build_knn(inst, 3), inst)
        # node 0's three nearest are all coincident: zero extent
        assert sub.mu[0] == 1.0
        assert np.all(sub.rescaled_dist[0] == 0.0)

    def test_distances_scale_by_mu(self):
        inst = generate_uniform(100, 5)
        sub = rescale(build_knn(inst, 10), inst)
        assert np.array_equal(sub.rescaled_dist, sub.raw_dist * sub.mu[:, None])

    def test_rescaled_bounded_by_diagonal(self):
        inst = generate_uniform(300, 9)
        sub = rescale(build_knn(inst, 16), inst)
        assert sub.rescaled_dist.max() <= np.sqrt(2.0) + 1e-12

    def test_similarity_invariance(self):
        # shrinking and translating the raw point set leaves rescaled
        # distances unchanged once coordinates are renormalized
        rng = np.random.default_rng(11)
        raw = rng.random((60, 2))
        a = Instance.from_raw("a", raw, Instance("x", [(0, 0), (1, 1), (0, 1)]).metric)
        b = Instance.from_raw("b", raw * 0.31 + np.array([5.0, -2.0]), a.metric)
        sa = rescale(build_knn(a, 10), a)
        sb = rescale(build_knn(b, 10), b)
        assert np.array_equal(sa.neighbors, sb.neighbors)
        assert np.allclose(sa.rescaled_dist, sb.rescaled_dist, atol=1e-9)

    def test_shrink_within_square_invariance(self):
        inst = generate_uniform(60, 13)
        shrunk = Instance("s", inst.coords * 0.25 + 0.3)
        sa = rescale(build_knn(inst, 10), inst)
        sb = rescale(build_knn(shrunk, 10), shrunk)
        assert np.array_equal(sa.neighbors, sb.neighbors)
        assert np.allclose(sa.rescaled_dist, sb.rescaled_dist, atol=1e-9)

    def test_relabeling_permutes_rows(self):
        inst = generate_uniform(40, 17)
        p = np.random.default_rng(0).permutation(40)
        relabeled = Instance("p", inst.coords[p])
        sa = rescale(build_knn(inst, 8), inst)
        sb = rescale(build_knn(relabeled, 8), relabeled)
        inv = np.empty(40, dtype=int)
        inv[p] = np.arange(40)
        # row for old node p[i] is row i in the relabeled build
        assert np.array_equal(inv[sa.neighbors[p]], sb.neighbors)
        assert np.allclose(sa.rescaled_dist[p], sb.rescaled_dist, atol=1e-12)

    def test_cross_scale_order_statistics_collapse(self):
        # 5-NN subgraphs: matched order statistics agree across a 100x
        # scale range within 20% once rescaled (raw means differ ~9x)
        def slot_means(n, n_inst, seed0):
            acc = np.zeros(5)
            for s in range(n_inst):
                inst = generate_uniform(n, seed0 + s)
                sub = rescale(build_knn(inst, 6), inst)
                acc += sub.rescaled_dist[:, 1:].mean(axis=0)
            return acc / n_inst

        m20 = slot_means(20, 25, 1000)
        m2k = slot_means(2000, 4, 5000)
        raw20 = build_knn(generate_uniform(20, 1), 6).raw_dist[:, 1:].mean()
        raw2k = build_knn(generate_uniform(2000, 1), 6).raw_dist[:, 1:].mean()
        assert raw20 / raw2k > 5.0
        for j in range(5):
            assert abs(m2k[j] / m20[j] - 1.0) < 0.20


class TestProjectCoords:
    def test_two_point_example(self):
        inst = Instance("pp", [(0.2, 0.3), (0.7, 0.5), (0.2, 0.9)])
        sub = rescale(build_knn(inst, 2), inst)
        pts = project_coords(sub, inst, 0)
        assert np.allclose(pts, [(0.0, 0.0), (1.0, 0.4)], atol=1e-12)

    def test_single_point_row(self):
        coords = np.array([[0.5, 0.5], [0.5, 0.5], [0.1, 0.9]])
        inst = Instance("sp", coords)
        sub = rescale(build_knn(inst, 1), inst)
        assert np.allclose(project_coords(sub, inst, 0), [(0.0, 0.0)])

    def test_projected_pairwise_distances_match_mu(self):
        inst = generate_uniform(30, 21)
        sub = rescale(build_knn(inst, 6), inst)
        for i in (0, 7, 29):
            pts = project_coords(sub, inst, i)
            orig = inst.coords[sub.neighbors[i]]
            for a in range(6):
                for b in range(6):
                    expect = np.hypot(*(orig[a] - orig[b])) * sub.mu[i]
                    assert np.hypot(*(pts[a] - pts[b])) == pytest.approx(
                        expect, abs=1e-12
                    )

    def test_projection_lands_in_unit_square(self):
        inst = generate_uniform(200, 3)
        sub = rescale(build_knn(inst, 12), inst)
        for i in range(0, 200, 17):
            pts = project_coords(sub, inst, i)
            assert pts.min() >= -1e-12
            assert pts.max() <= 1.0 + 1e-12


def test_csv_export(tmp_path):
    inst = generate_uniform(10, 2)
    sub = rescale(build_knn(inst, 4), inst)
    path = tmp_path / "sub.csv"
    export_subgraph_csv(sub, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "i,j,raw_dist,rescaled_dist,mu_i"
    assert len(lines) == 1 + 10 * 4
    first = lines[1].split(",")
    assert first[0] == "1" and first[1] == "1"
    assert float(first[2]) == 0.0
