import numpy as np
import pytest
import torch

from roomsplat.layout_io import box_room
from roomsplat.palette import default_palette
from roomsplat.renderer import (BackgroundField, Camera, FieldConfig, GaussianBatch,
                                SplatOptions, rasterize_polygons, render_background,
                                splat_gaussians)

from conftest import origin_camera, random_batch, random_rotations

EXACT = SplatOptions(early_stop_t=0.0, backend="torch")


def single_disk(depth=2.0, scale=3.0, opacity=1.0, color=(0.2, 0.6, 0.9),
                dtype=torch.float64):
    """Disk on the +x axis facing an origin camera that looks along +x."""
    rot = np.array([[0.0, 0.0, -1.0],   # disk normal (third column) = -x
                    [1.0, 0.0, 0.0],
                    [0.0, 1.0, 0.0]])
    return GaussianBatch(
        positions=torch.tensor([[depth, 0.0, 0.0]], dtype=dtype),
        rotations=torch.as_tensor(rot, dtype=dtype)[None],
        scales=torch.full((1, 2), scale, dtype=dtype),
        opacities=torch.tensor([opacity], dtype=dtype),
        colors=torch.tensor([color], dtype=dtype),
        semantics=torch.tensor([[1.0, 0.0, 0.0]], dtype=dtype),
    )


class TestObjectsForward:
    def test_empty_scene(self):
        batch = GaussianBatch(
            positions=torch.zeros(0, 3), rotations=torch.zeros(0, 3, 3),
            scales=torch.zeros(0, 2), opacities=torch.zeros(0),
            colors=torch.zeros(0, 3), semantics=torch.zeros(0, 3))
        bundle = splat_gaussians(batch, origin_camera())
        assert float(bundle.A.max()) == 0.0
        assert bool(torch.isinf(bundle.D).all())
        assert float(bundle.I.abs().max()) == 0.0

    def test_single_facing_disk(self):
        cam = origin_camera(width=17, height=17)  # odd: center pixel on axis
        bundle = splat_gaussians(single_disk(), cam, EXACT)
        cy, cx = 8, 8
        assert float(bundle.A[cy, cx]) >= 0.99
        np.testing.assert_allclose(bundle.I[cy, cx].numpy(), [0.2, 0.6, 0.9], atol=2e-3)
        np.testing.assert_allclose(bundle.N[cy, cx].numpy(), [0, 0, -1], atol=1e-9)
        assert abs(float(bundle.D[cy, cx]) - 2.0) < 1e-9

    def test_two_disks_front_wins(self):
        near = single_disk(depth=1.0, color=(0.9, 0.1, 0.1))
        far = single_disk(depth=2.0, color=(0.1, 0.9, 0.1))
        both = GaussianBatch(
            positions=torch.cat([far.positions, near.positions]),
            rotations=torch.cat([far.rotations, near.rotations]),
            scales=torch.cat([far.scales, near.scales]),
            opacities=torch.cat([far.opacities, near.opacities]),
            colors=torch.cat([far.colors, near.colors]),
            semantics=torch.cat([far.semantics, near.semantics]),
        )
        cam = origin_camera(width=17, height=17)
        bundle = splat_gaussians(both, cam, EXACT)
        np.testing.assert_allclose(bundle.I[8, 8].numpy(), [0.9, 0.1, 0.1], atol=5e-3)
        assert abs(float(bundle.D[8, 8]) - 1.0) < 5e-3

    def test_adding_primitive_never_decreases_alpha(self):
        cam = origin_camera()
        base = random_batch(seed=11, n=4)
        extra = random_batch(seed=12, n=5)

        def take(b, k):
            return GaussianBatch(b.positions[:k], b.rotations[:k], b.scales[:k],
                                 b.opacities[:k], b.colors[:k], b.semantics[:k])

        a_before = splat_gaussians(take(extra, 4), cam, EXACT).A
        a_after = splat_gaussians(take(extra, 5), cam, EXACT).A
        assert bool((a_after >= a_before - 1e-12).all())
        del base

    def test_alpha_bounded(self):
        bundle = splat_gaussians(random_batch(seed=3, n=5, opacity_range=(0.9, 1.0)),
                                 origin_camera(), EXACT)
        assert float(bundle.A.max()) <= 1.0 + 1e-9
        assert float(bundle.A.min()) >= 0.0

    def test_bundle_invariants(self):
        bundle = splat_gaussians(random_batch(seed=7, n=5), origin_camera(32, 32), EXACT)
        bundle.validate()

    def test_determinism_bitwise(self):
        batch = random_batch(seed=5, n=5, dtype=torch.float32)
        cam = origin_camera(32, 32)
        a = splat_gaussians(batch, cam)
        b = splat_gaussians(batch, cam)
        for name in ("I", "A", "S", "N", "D"):
            np.testing.assert_array_equal(getattr(a, name).numpy(), getattr(b, name).numpy())

    def test_fast_and_torch_backends_agree(self):
        cam = origin_camera(48, 48)
        for seed in range(4):
            batch = random_batch(seed=seed, n=30, dtype=torch.float32)
            fast = splat_gaussians(batch, cam, SplatOptions())
            ref = splat_gaussians(batch, cam, SplatOptions(backend="torch"))
            for name in ("I", "A", "S", "N"):
                diff = (getattr(fast, name) - getattr(ref, name)).abs().max()
                assert float(diff) < 3e-4, (seed, name, float(diff))
            assert bool((torch.isfinite(fast.D) == torch.isfinite(ref.D)).all())
            fin = torch.isfinite(fast.D)
            if bool(fin.any()):
                assert float((fast.D[fin] - ref.D[fin]).abs().max()) < 3e-4

    def test_early_stop_matches_exact_within_threshold(self):
        batch = random_batch(seed=9, n=40, dtype=torch.float32, opacity_range=(0.8, 1.0))
        cam = origin_camera(32, 32)
        approx = splat_gaussians(batch, cam, SplatOptions(backend="torch"))
        exact = splat_gaussians(batch, cam, EXACT)
        assert float((approx.A - exact.A).abs().max()) < 2e-4

    def test_behind_camera_culled(self):
        behind = single_disk(depth=-2.0)
        bundle = splat_gaussians(behind, origin_camera(), EXACT)
        assert float(bundle.A.max()) == 0.0


class TestBackgroundForward:
    def test_wall_depth_and_normal(self):
        # camera at room center looking along +x at a wall 2 m away
        shell = box_room(4, 4, 4)
        cam = Camera(position=np.array([2.0, 2.0, 2.0]), elevation=0.0, azimuth=0.0,
                     fov_y=0.8, width=17, height=17)
        pal = default_palette()
        bundle = render_background(shell, None, cam, pal)
        assert abs(float(bundle.D[8, 8]) - 2.0) < 1e-9
        np.testing.assert_allclose(bundle.N[8, 8].numpy(), [0, 0, -1], atol=1e-12)
        assert bool(bundle.A.min() >= 1.0)  # enclosed room: every ray hits

    def test_floor_semantics(self):
        shell = box_room(4, 4, 3)
        cam = Camera(position=np.array([2.0, 2.0, 1.5]), elevation=-1.2, azimuth=0.3,
                     fov_y=0.9, width=16, height=16)
        pal = default_palette()
        bundle = render_background(shell, None, cam, pal)
        np.testing.assert_allclose(bundle.S[8, 8].numpy(), pal.rgb_float("floor"), atol=1e-6)

    def test_zero_tables_decode_bias(self):
        shell = box_room(3, 3, 3)
        lo, hi = shell.bounds()
        field = BackgroundField(FieldConfig(levels=2, log2_table=8), lo, hi, seed=0)
        with torch.no_grad():
            field.tables.zero_()
            field.decoder_bias.fill_(0.4)
        cam = Camera(position=np.array([1.5, 1.5, 1.5]), elevation=0.1, azimuth=0.7,
                     fov_y=1.0, width=12, height=12)
        bundle = render_background(shell, field, cam, default_palette())
        np.testing.assert_allclose(bundle.I.numpy(), 0.4, atol=1e-7)

    def test_field_color_is_view_independent(self):
        shell = box_room(3, 3, 3)
        lo, hi = shell.bounds()
        field = BackgroundField(FieldConfig(levels=2, log2_table=8), lo, hi, seed=1)
        pts = torch.tensor([[1.0, 2.0, 0.5], [0.3, 0.3, 2.9]], dtype=torch.float32)
        a = field.rgb(pts)
        b = field.rgb(pts.clone())
        np.testing.assert_array_equal(a.detach().numpy(), b.detach().numpy())
        # and through two different cameras, I_b equals the field at the hit points
        pal = default_palette()
        for pos, az in (((1.5, 1.5, 1.5), 0.4), ((0.7, 2.2, 1.0), -1.1)):
            cam = Camera(position=np.array(pos), elevation=0.0, azimuth=az, fov_y=1.0,
                         width=8, height=8)
            bundle = render_background(shell, field, cam, pal)
            raster = rasterize_polygons(shell.polygons, cam)
            want = field.rgb(torch.as_tensor(raster.points_world.reshape(-1, 3),
                                             dtype=torch.float32))
            np.testing.assert_allclose(bundle.I.reshape(-1, 3).detach().numpy(),
                                       want.detach().numpy(), atol=1e-7)

    def test_escaped_rays_flagged(self, caplog):
        # a single open quad cannot enclose the camera; build shell bypassing
        # watertight validation by constructing RoomShell via box_room then
        # aiming the camera at a corner seam is still enclosed, so instead
        # rasterize a bare polygon list.
        from roomsplat.layout_io import polygon_quad

        quad = polygon_quad([[2, -1, -1], [2, 1, -1], [2, 1, 1], [2, -1, 1]], "wall")
        cam = origin_camera(8, 8, fov=1.4)
        raster = rasterize_polygons([quad], cam)
        assert raster.hit.any() and (~raster.hit).any()
        assert np.isinf(raster.depth[~raster.hit]).all()


class TestOffAxisCoverage:
    def test_oblique_disk_fully_rendered(self):
        # regression for the screen-radius parallax bound: an oblique disk far
        # off-axis must not be clipped by the conservative bbox
        rng = np.random.default_rng(0)
        rot = random_rotations(1, rng)
        batch = GaussianBatch(
            positions=torch.tensor([[1.0, 0.85, 0.0]], dtype=torch.float64),
            rotations=torch.as_tensor(rot, dtype=torch.float64),
            scales=torch.full((1, 2), 0.3, dtype=torch.float64),
            opacities=torch.tensor([1.0], dtype=torch.float64),
            colors=torch.full((1, 3), 0.5, dtype=torch.float64),
            semantics=torch.full((1, 3), 0.5, dtype=torch.float64),
        )
        cam = origin_camera(64, 64, fov=1.6)
        coarse = splat_gaussians(batch, cam, EXACT)
        # reference: brute force over every pixel without binning, tile = image
        brute = splat_gaussians(batch, cam, SplatOptions(
            tile=64, early_stop_t=0.0, backend="torch"))
        np.testing.assert_allclose(coarse.A.numpy(), brute.A.numpy(), atol=1e-12)


class TestTileParallelInvariance:
    def test_bucket_grouping_does_not_change_bits(self):
        # tile batching is an execution detail: per-tile math is independent,
        # so regrouping buckets must reproduce the same images bit for bit
        batch = random_batch(seed=21, n=40, dtype=torch.float32)
        cam = origin_camera(48, 48)
        a = splat_gaussians(batch, cam, SplatOptions(backend="torch", bucket_tiles=2))
        b = splat_gaussians(batch, cam, SplatOptions(backend="torch", bucket_tiles=64))
        for name in ("I", "A", "S", "N", "D"):
            np.testing.assert_array_equal(getattr(a, name).numpy(),
                                          getattr(b, name).numpy())
