import numpy as np
import pytest

from boxrerank.boxgeom import BBox, DetBox, DetectionSet, Role
from boxrerank.clustering import (
    Clustering,
    cluster_boxes,
    cluster_stats,
    flag_outliers,
)
from boxrerank.errors import FewerBoxesThanClusters


def make_set(features, confs=None):
    features = np.asarray(features, dtype=float)
    n, d = features.shape
    confs = confs if confs is not None else [0.9] * n
    boxes = [
        DetBox(i, f"img{i % 3}", BBox(20.0 * i, 0, 20.0 * i + 10, 10), confs[i], features[i])
        for i in range(n)
    ]
    return DetectionSet(boxes, d, Role.TRAIN)


class TestClusterBoxes:
    def test_well_separated_groups(self):
        s = make_set([(0, 0), (0, 1), (10, 10), (10, 11)])
        c = cluster_boxes(s, k=2, conf_floor=0.1, rng_seed=0)
        a = {c.assignments[0], c.assignments[1]}
        b = {c.assignments[2], c.assignments[3]}
        assert len(a) == 1 and len(b) == 1 and a != b

    def test_k1_centroid_is_mean(self):
        feats = [(0, 0), (2, 0), (0, 2), (2, 2)]
        s = make_set(feats)
        c = cluster_boxes(s, k=1, conf_floor=0.1, rng_seed=0)
        assert set(c.assignments.values()) == {0}
        np.testing.assert_allclose(c.centroids[0], np.mean(feats, axis=0))

    def test_three_gaussians_pure(self):
        # 50 points from 3 separated components; brute-force check against
        # the nearest generating center
        rng = np.random.default_rng(7)
        centers = np.array([(0.0, 0.0), (15.0, 0.0), (0.0, 15.0)])
        comp = rng.integers(0, 3, size=50)
        feats = centers[comp] + 0.5 * rng.standard_normal((50, 2))
        s = make_set(feats)
        c = cluster_boxes(s, k=3, conf_floor=0.1, rng_seed=1)
        # brute-force truth: nearest generating center
        truth = np.argmin(
            np.linalg.norm(feats[:, None, :] - centers[None], axis=2), axis=1
        )
        mapping = {}
        for i in range(50):
            ci = c.assignments[i]
            mapping.setdefault(ci, truth[i])
            assert mapping[ci] == truth[i], "cluster mixes generating components"

    def test_floor_excludes_boxes(self):
        s = make_set([(0, 0), (0, 1), (10, 10), (10, 11)], confs=[0.9, 0.9, 0.9, 0.05])
        c = cluster_boxes(s, k=2, conf_floor=0.1, rng_seed=0)
        assert 3 not in c.assignments
        assert set(c.assignments) == {0, 1, 2}

    def test_floor_is_strict(self):
        s = make_set([(0, 0), (1, 1), (2, 2)], confs=[0.1, 0.5, 0.5])
        c = cluster_boxes(s, k=2, conf_floor=0.1, rng_seed=0)
        assert 0 not in c.assignments  # exactly at floor -> excluded

    def test_fewer_boxes_than_clusters(self):
        s = make_set([(0, 0), (1, 1)])
        with pytest.raises(FewerBoxesThanClusters):
            cluster_boxes(s, k=3, conf_floor=0.1, rng_seed=0)

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        s = make_set(rng.standard_normal((40, 4)))
        c1 = cluster_boxes(s, k=5, conf_floor=0.1, rng_seed=11)
        c2 = cluster_boxes(s, k=5, conf_floor=0.1, rng_seed=11)
        assert c1.assignments == c2.assignments
        np.testing.assert_array_equal(c1.centroids, c2.centroids)
        assert c1.inertia == c2.inertia

    def test_each_eligible_box_assigned_once(self):
        rng = np.random.default_rng(4)
        s = make_set(rng.standard_normal((30, 3)))
        c = cluster_boxes(s, k=4, conf_floor=0.1, rng_seed=0)
        assert set(c.assignments) == set(range(30))
        assert all(0 <= ci < 4 for ci in c.assignments.values())

    def test_inertia_matches_recomputation(self):
        rng = np.random.default_rng(5)
        s = make_set(rng.standard_normal((25, 3)))
        c = cluster_boxes(s, k=4, conf_floor=0.1, rng_seed=2)
        recomputed = sum(
            np.sum((s.get(i).feature - c.centroids[ci]) ** 2)
            for i, ci in c.assignments.items()
        )
        assert c.inertia == pytest.approx(recomputed, rel=1e-6)
        assert c.inertia >= 0


class TestClusterStats:
    def test_mean_confidence(self):
        s = make_set([(0, 0), (0.1, 0), (0, 0.1)], confs=[0.9, 0.8, 1.0])
        c = cluster_boxes(s, k=1, conf_floor=0.1, rng_seed=0)
        stats = cluster_stats(c, s)
        assert stats[0].mean_confidence == pytest.approx(0.9)

    def test_singleton(self):
        s = make_set([(0, 0), (10, 10)], confs=[0.4, 0.9])
        c = cluster_boxes(s, k=2, conf_floor=0.1, rng_seed=0)
        stats = {tuple(st.member_box_ids): st for st in cluster_stats(c, s)}
        assert stats[(0,)].mean_confidence == pytest.approx(0.4)
        assert stats[(0,)].outlier_box_ids == []

    def test_mean_within_member_range(self):
        rng = np.random.default_rng(6)
        s = make_set(rng.standard_normal((30, 2)), confs=rng.uniform(0.2, 1.0, 30).tolist())
        c = cluster_boxes(s, k=4, conf_floor=0.1, rng_seed=0)
        for st in cluster_stats(c, s):
            if st.member_count:
                confs = [s.get(i).confidence for i in st.member_box_ids]
                assert min(confs) <= st.mean_confidence <= max(confs)

    def test_conf_override(self):
        s = make_set([(0, 0), (0.1, 0)], confs=[0.9, 0.8])
        c = cluster_boxes(s, k=1, conf_floor=0.1, rng_seed=0)
        stats = cluster_stats(c, s, conf_override={0: 0.1, 1: 0.3})
        assert stats[0].mean_confidence == pytest.approx(0.2)

    def test_empty_cluster_reported_empty(self):
        c = Clustering(
            centroids=np.array([[0.0, 0.0], [100.0, 100.0]]),
            assignments={0: 0, 1: 0},
            k=2,
            inertia=0.0,
        )
        s = make_set([(0, 0), (0, 0)])
        stats = cluster_stats(c, s)
        assert stats[1].member_count == 0
        assert stats[1].member_box_ids == []


class TestFlagOutliers:
    def manual_clustering(self, feats, centroid):
        return Clustering(
            centroids=np.array([centroid], dtype=float),
            assignments={i: 0 for i in range(len(feats))},
            k=1,
            inertia=0.0,
        )

    def test_equidistant_no_outliers(self):
        feats = [(1, 0), (-1, 0), (0, 1), (0, -1)]
        c = self.manual_clustering(feats, (0, 0))
        assert flag_outliers(c, make_set(feats)) == set()

    def test_small_cluster_no_outliers(self):
        feats = [(0, 0), (0, 0), (50, 50)]
        c = self.manual_clustering(feats, (0, 0))
        assert flag_outliers(c, make_set(feats)) == set()

    def test_far_point_flagged(self):
        # 20 points at distance ~1, one at distance 8: mean+2*std ~ 4.4 < 8
        rng = np.random.default_rng(9)
        angles = rng.uniform(0, 2 * np.pi, 20)
        feats = [(np.cos(a), np.sin(a)) for a in angles] + [(8.0, 0.0)]
        c = self.manual_clustering(feats, (0, 0))
        flagged = flag_outliers(c, make_set(feats))
        assert flagged == {20}
        # verify by direct computation
        dists = np.array([np.hypot(*f) for f in feats])
        thr = dists.mean() + 2 * dists.std()
        assert dists[20] > thr
        assert all(d <= thr for d in dists[:20])

    def test_outliers_subset_of_members(self):
        rng = np.random.default_rng(10)
        s = make_set(rng.standard_normal((40, 2)))
        c = cluster_boxes(s, k=3, conf_floor=0.1, rng_seed=0)
        flagged = flag_outliers(c, s)
        assert flagged <= set(c.assignments)

    def test_outliers_included_in_mean(self):
        # for n near points + 1 far point the far z-score caps at n/sqrt(n+1),
        # so the cluster must be big enough for mean+2*stddev to bite
        angles = np.linspace(0, 2 * np.pi, 12, endpoint=False)
        feats = [(np.cos(a), np.sin(a)) for a in angles] + [(8.0, 0.0)]
        c = self.manual_clustering(feats, (0, 0))
        s = make_set(feats, confs=[0.8] * 12 + [0.3])
        stats = cluster_stats(c, s)
        assert stats[0].outlier_box_ids == [12]
        assert stats[0].mean_confidence == pytest.approx((0.8 * 12 + 0.3) / 13)
