import math

import numpy as np
import pytest

from roomsplat.errors import ValidationError
from roomsplat.layout_io import layout_from_dict
from roomsplat.scene import SemanticBox, SemanticLayout
from roomsplat.tsdf import TSDFGrid, build_tsdf, free_space_sdf
from roomsplat.view_sampling import (CameraSampler, CameraSamplerConfig, coverage_report,
                                     orientation_statistics, position_distribution,
                                     sample_cameras, sample_orientation)

from conftest import two_box_layout_dict


def centered_box_layout(box_size=(1.0, 1.0, 1.0), room=(4.0, 5.0, 2.7)):
    w, d, h = room
    return layout_from_dict({
        "scene_prompt": "x",
        "room": [
            {"label": "floor", "vertices": [[0, 0, 0], [w, 0, 0], [w, d, 0], [0, d, 0]]},
            {"label": "ceiling", "vertices": [[0, 0, h], [0, d, h], [w, d, h], [w, 0, h]]},
            {"label": "wall", "vertices": [[0, 0, 0], [0, 0, h], [w, 0, h], [w, 0, 0]]},
            {"label": "wall", "vertices": [[0, d, 0], [w, d, 0], [w, d, h], [0, d, h]]},
            {"label": "wall", "vertices": [[0, 0, 0], [0, d, 0], [0, d, h], [0, 0, h]]},
            {"label": "wall", "vertices": [[w, 0, 0], [w, 0, h], [w, d, h], [w, d, 0]]},
        ],
        "boxes": [{"label": "table", "euler_zyx_deg": [0, 0, 0],
                   "translation": [w / 2, d / 2, box_size[2] / 2], "size": list(box_size)}],
    })


class TestSignedDistance:
    def test_inside_box_negative(self):
        layout = centered_box_layout()
        sd = free_space_sdf(layout)
        center = layout.boxes[0].translation
        value = float(sd(center)[0])
        assert value < 0
        assert abs(value + 0.5) < 1e-9  # half the smallest box extent

    def test_truncation_clamp(self):
        layout = centered_box_layout()
        grid = build_tsdf(layout, voxel=0.25, tau=0.4)
        assert float(np.abs(grid.values).max()) <= 0.4 + 1e-12
        # a point far from every surface sits exactly at +tau
        far = np.array([1.25, 1.25, 1.35])
        assert float(np.clip(free_space_sdf(layout)(far), -0.4, 0.4)[0]) == pytest.approx(0.4)

    def test_point_above_box_face(self):
        # 0.1 m above the top face, everything else farther than tau
        layout = centered_box_layout()
        sd = free_space_sdf(layout)
        point = layout.boxes[0].translation + np.array([0.0, 0.0, 0.5 + 0.1])
        assert float(sd(point)[0]) == pytest.approx(0.1, abs=1e-9)

    def test_outside_room_negative(self):
        layout = centered_box_layout()
        sd = free_space_sdf(layout)
        assert float(sd(np.array([-1.0, 2.5, 1.0]))[0]) < 0

    def test_lipschitz_across_neighbors(self):
        layout = layout_from_dict(two_box_layout_dict())
        grid = build_tsdf(layout, voxel=0.2, tau=0.6)
        v = grid.values
        bound = math.sqrt(3) * grid.voxel + 1e-6
        for axis in range(3):
            diffs = np.abs(np.diff(v, axis=axis))
            assert float(diffs.max()) <= bound

    def test_degenerate_room_rejected(self):
        layout = centered_box_layout()
        with pytest.raises(ValidationError):
            build_tsdf(layout, voxel=-0.1, tau=0.5)


class TestPositionDistribution:
    def test_uniform_when_constant(self):
        grid = TSDFGrid(origin=np.zeros(3), voxel=1.0, dims=(2, 2, 1),
                        values=np.full((2, 2, 1), 0.7))
        dist = position_distribution(grid)
        np.testing.assert_allclose(dist.probabilities, 0.25)

    def test_occupied_gets_zero(self):
        values = np.array([[[0.5]], [[-0.2]]])
        grid = TSDFGrid(origin=np.zeros(3), voxel=1.0, dims=(2, 1, 1), values=values)
        dist = position_distribution(grid)
        assert dist.flat_indices.tolist() == [0]
        np.testing.assert_allclose(dist.probabilities, [1.0])

    def test_two_voxel_normalization(self):
        values = np.array([[[0.2]], [[0.4]]])
        grid = TSDFGrid(origin=np.zeros(3), voxel=1.0, dims=(2, 1, 1), values=values)
        dist = position_distribution(grid)
        np.testing.assert_allclose(dist.probabilities, [1.0 / 3.0, 2.0 / 3.0])

    def test_no_free_space_rejected(self):
        grid = TSDFGrid(origin=np.zeros(3), voxel=1.0, dims=(2, 1, 1),
                        values=np.full((2, 1, 1), -0.1))
        with pytest.raises(ValidationError, match="free space"):
            position_distribution(grid)

    def test_probabilities_sum_to_one(self, bedroom_layout):
        grid = build_tsdf(bedroom_layout, voxel=0.3, tau=1.0)
        dist = position_distribution(grid)
        assert abs(dist.probabilities.sum() - 1.0) < 1e-9


class TestOrientation:
    def test_single_box_ahead(self):
        layout = centered_box_layout(room=(4, 4, 2))
        box = layout.boxes[0]
        x = box.translation - np.array([1.0, 0.0, 0.0])
        mean_e, std_e, mean_a, std_a = orientation_statistics(layout, x)
        assert mean_e == pytest.approx(0.0, abs=1e-12)
        assert std_e == 0.0
        assert mean_a == pytest.approx(0.0, abs=1e-12)
        assert std_a == 0.0
        # degenerate normal draw with a zero floor is exact
        rng = np.random.default_rng(0)
        elev, azim = sample_orientation(layout, x, rng, sigma_min=0.0)
        assert (elev, azim) == (0.0, 0.0)

    def test_box_overhead_clamped(self):
        layout = centered_box_layout(room=(4, 4, 3))
        box = layout.boxes[0]
        x = box.translation - np.array([0.0, 0.0, 0.4])
        mean_e, _, _, _ = orientation_statistics(layout, x)
        assert mean_e == pytest.approx(math.pi / 2, abs=1e-12)
        rng = np.random.default_rng(0)
        elev, _ = sample_orientation(layout, x, rng, sigma_min=0.0)
        assert elev < math.pi / 2  # clamped inside the open interval

    def test_two_boxes_circular_stats(self):
        # boxes at azimuths +-45 deg, elevation 0: mean 0, std 45 deg pre-floor
        doc = two_box_layout_dict()
        doc["room"][0]["vertices"] = [[-5, -5, -2], [5, -5, -2], [5, 5, -2], [-5, 5, -2]]
        doc["room"][1]["vertices"] = [[-5, -5, 2], [-5, 5, 2], [5, 5, 2], [5, -5, 2]]
        doc["room"][2]["vertices"] = [[-5, -5, -2], [-5, -5, 2], [5, -5, 2], [5, -5, -2]]
        doc["room"][3]["vertices"] = [[-5, 5, -2], [5, 5, -2], [5, 5, 2], [-5, 5, 2]]
        doc["room"][4]["vertices"] = [[-5, -5, -2], [-5, 5, -2], [-5, 5, 2], [-5, -5, 2]]
        doc["room"][5]["vertices"] = [[5, -5, -2], [5, -5, 2], [5, 5, 2], [5, 5, -2]]
        doc["boxes"] = [
            {"label": "a", "euler_zyx_deg": [0, 0, 0], "translation": [1, 1, 0],
             "size": [0.5, 0.5, 0.5]},
            {"label": "b", "euler_zyx_deg": [0, 0, 0], "translation": [1, -1, 0],
             "size": [0.5, 0.5, 0.5]},
        ]
        layout = layout_from_dict(doc)
        _, _, mean_a, std_a = orientation_statistics(layout, np.zeros(3))
        assert mean_a == pytest.approx(0.0, abs=1e-12)
        assert std_a == pytest.approx(math.radians(45.0), abs=1e-12)

    def test_seam_wrapping(self):
        # boxes straddling the +-pi seam: circular mean must stay at pi, not 0
        doc = two_box_layout_dict()
        layout = layout_from_dict(doc)
        x = np.array([2.9, 1.55, 0.4])  # boxes are roughly in the -x direction
        _, _, mean_a, std_a = orientation_statistics(layout, x)
        assert abs(abs(mean_a) - math.pi) < 0.6
        assert std_a < math.radians(40)

    def test_coincident_position_rejected(self):
        layout = centered_box_layout()
        with pytest.raises(ValidationError, match="coincides"):
            orientation_statistics(
                SemanticLayout(boxes=layout.boxes, room=layout.room, scene_prompt="x"),
                layout.boxes[0].translation,
            )


class TestSampleCameras:
    def test_positions_in_free_space(self, bedroom_layout):
        config = CameraSamplerConfig(voxel=0.25, tau=0.8)
        sampler = CameraSampler(bedroom_layout, config, seed=4)
        cams = sampler.sample(200)
        sd = sampler.sdf
        values = sd(np.stack([c.position for c in cams]))
        assert (values > 0).all()

    def test_seeded_determinism(self, bedroom_layout):
        config = CameraSamplerConfig(voxel=0.3)
        a = sample_cameras(bedroom_layout, 25, config, seed=11)
        b = sample_cameras(bedroom_layout, 25, config, seed=11)
        for ca, cb in zip(a, b):
            np.testing.assert_array_equal(ca.position, cb.position)
            assert (ca.elevation, ca.azimuth) == (cb.elevation, cb.azimuth)

    def test_n_must_be_positive(self, bedroom_layout):
        with pytest.raises(ValidationError):
            sample_cameras(bedroom_layout, 0, CameraSamplerConfig(voxel=0.4))

    def test_histogram_matches_distribution(self):
        # coarse grid so 2e4 draws resolve the voxel probabilities
        layout = centered_box_layout(room=(2.4, 2.4, 1.6), box_size=(0.8, 0.8, 0.8))
        config = CameraSamplerConfig(voxel=0.8, tau=0.6)
        sampler = CameraSampler(layout, config, seed=0)
        dist = sampler.distribution
        counts = np.zeros(dist.flat_indices.size)
        lookup = {int(f): i for i, f in enumerate(dist.flat_indices)}
        n = 20000
        for _ in range(n):
            choice = sampler.rng.choice(dist.flat_indices.size, p=dist.probabilities)
            counts[choice] += 1
        tv = 0.5 * np.abs(counts / n - dist.probabilities).sum()
        assert tv < 0.03
        del lookup


class TestCoverage:
    def test_zero_cameras(self, bedroom_layout):
        grid = build_tsdf(bedroom_layout, voxel=0.4, tau=1.0)
        report = coverage_report([], bedroom_layout, grid)
        assert report.n_cameras == 0
        assert report.free_voxel_coverage == 0.0
        assert all(v == 0 for v in report.per_box_visibility)

    def test_single_camera_partial(self, bedroom_layout):
        grid = build_tsdf(bedroom_layout, voxel=0.4, tau=1.0)
        cams = sample_cameras(bedroom_layout, 1, CameraSamplerConfig(voxel=0.4), seed=0)
        report = coverage_report(cams, bedroom_layout, grid)
        assert 0.0 < report.free_voxel_coverage < 1.0

    def test_many_cameras_cover_boxes(self, bedroom_layout):
        grid = build_tsdf(bedroom_layout, voxel=0.4, tau=1.0)
        cams = sample_cameras(bedroom_layout, 120, CameraSamplerConfig(voxel=0.4), seed=1)
        report = coverage_report(cams, bedroom_layout, grid)
        assert all(v >= 1 for v in report.per_box_visibility)
        assert report.min_camera_clearance > 0


class TestOrientationPull:
    def test_azimuth_circular_mean_converges(self, bedroom_layout):
        # over many draws at a fixed position, the sampled azimuth circular
        # mean lands within 2 degrees of the analytic circular mean
        x = np.array([2.0, 2.5, 1.4])
        _, _, want_azim, _ = orientation_statistics(bedroom_layout, x)
        rng = np.random.default_rng(0)
        draws = np.array([sample_orientation(bedroom_layout, x, rng)[1]
                          for _ in range(10_000)])
        mean = math.atan2(np.sin(draws).mean(), np.cos(draws).mean())
        delta = abs((mean - want_azim + math.pi) % (2 * math.pi) - math.pi)
        assert math.degrees(delta) < 2.0
