"""File formats (frames, masks, flows), flow composition, and manifest/clip
loading including all-pairs synthesis from consecutive flows."""

import json
import struct

import numpy as np
import pytest
from PIL import Image

from framefuse import synth
from framefuse.image import FlowField, Frame, OcclusionMask
from framefuse.io import (
    Clip,
    ClipManifest,
    FileFormatError,
    compose_flows,
    load_clip,
    load_flow,
    load_frame,
    load_frame_raw,
    load_manifest,
    load_mask,
    save_flow,
    save_frame_png,
    save_frame_raw,
    save_mask_png,
)


class TestFrameIO:
    def test_png_gray_values_scale_by_255(self, tmp_path):
        path = tmp_path / "g.png"
        Image.fromarray(np.array([[0, 128], [255, 64]], np.uint8), "L").save(path)
        frame = load_frame(path)
        assert frame.data.shape == (2, 2, 1)
        assert frame.data[0, 0, 0] == 0.0
        assert frame.data[1, 0, 0] == 1.0
        assert frame.data[0, 1, 0] == pytest.approx(128 / 255)

    def test_png_rgb_channel_order(self, tmp_path):
        path = tmp_path / "c.png"
        px = np.zeros((1, 2, 3), np.uint8)
        px[0, 0] = (255, 0, 0)
        px[0, 1] = (0, 0, 255)
        Image.fromarray(px, "RGB").save(path)
        frame = load_frame(path)
        assert np.array_equal(frame.data[0, 0], [1.0, 0.0, 0.0])
        assert np.array_equal(frame.data[0, 1], [0.0, 0.0, 1.0])

    def test_palette_image_converts(self, tmp_path):
        path = tmp_path / "p.png"
        Image.fromarray(np.array([[3, 200]], np.uint8), "L").convert("P").save(path)
        assert load_frame(path).channels == 3

    def test_binary_ppm_and_pgm(self, tmp_path):
        ppm = tmp_path / "im.ppm"
        ppm.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
        frame = load_frame(ppm)
        assert np.array_equal(frame.data[0, 0], [1.0, 0.0, 0.0])
        assert np.array_equal(frame.data[0, 1], [0.0, 0.0, 1.0])

        pgm = tmp_path / "im.pgm"
        pgm.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
        frame = load_frame(pgm)
        assert frame.channels == 1
        assert frame.data[0, 1, 0] == 1.0

    def test_sixteen_bit_png_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((4, 4), np.uint16)).save(path)
        with pytest.raises(FileFormatError, match="8-bit"):
            load_frame(path)

    def test_missing_file_error_names_path(self, tmp_path):
        with pytest.raises(FileFormatError, match="nope.png"):
            load_frame(tmp_path / "nope.png")

    def test_save_quantizes_to_half_step(self, tmp_path):
        rng = np.random.default_rng(5)
        frame = Frame(rng.random((9, 7, 3)).astype(np.float32))
        path = tmp_path / "q.png"
        save_frame_png(path, frame)
        back = load_frame(path)
        assert np.abs(back.data - frame.data).max() <= 0.5 / 255 + 1e-7

    def test_save_clamps_out_of_range(self, tmp_path):
        frame = Frame(np.array([[[-0.5], [1.5]]], np.float32))
        path = tmp_path / "c.png"
        save_frame_png(path, frame)
        back = load_frame(path)
        assert back.data[0, 0, 0] == 0.0
        assert back.data[0, 1, 0] == 1.0

    def test_raw_roundtrip_is_lossless(self, tmp_path):
        frame = Frame(np.random.default_rng(1).random((5, 4, 3)).astype(np.float32))
        path = tmp_path / "f.npy"
        save_frame_raw(path, frame)
        assert np.array_equal(load_frame_raw(path).data, frame.data)


class TestMaskIO:
    def test_roundtrip_and_threshold(self, tmp_path):
        bits = np.zeros((3, 3), bool)
        bits[1, 2] = True
        path = tmp_path / "m.png"
        save_mask_png(path, OcclusionMask(bits))
        assert np.array_equal(load_mask(path).bits, bits)
        # mid grays stay below the >127 threshold
        gray = tmp_path / "gray.png"
        Image.fromarray(np.full((2, 2), 127, np.uint8), "L").save(gray)
        assert load_mask(gray).count == 0


class TestFlowIO:
    # 2x1 field assembled from the format definition: magic float, then
    # width/height int32, then interleaved (u, v) float32 pairs.
    GOLDEN = (
        struct.pack("<f", 202021.25)
        + struct.pack("<ii", 2, 1)
        + struct.pack("<ffff", 1.5, -2.0, 0.25, 3.0)
    )

    def test_golden_bytes_decode(self, tmp_path):
        path = tmp_path / "a.flo"
        path.write_bytes(self.GOLDEN)
        flow, unknown = load_flow(path)
        assert (flow.height, flow.width) == (1, 2)
        assert flow.u.tolist() == [[1.5, 0.25]]
        assert flow.v.tolist() == [[-2.0, 3.0]]
        assert unknown.count == 0

    def test_writer_matches_golden_bytes(self, tmp_path):
        path = tmp_path / "b.flo"
        flow = FlowField(np.array([[1.5, 0.25]], np.float32),
                         np.array([[-2.0, 3.0]], np.float32))
        save_flow(path, flow)
        assert path.read_bytes() == self.GOLDEN

    def test_unknown_sentinel_zeroed_and_masked(self, tmp_path):
        path = tmp_path / "u.flo"
        path.write_bytes(
            struct.pack("<f", 202021.25)
            + struct.pack("<ii", 2, 1)
            + struct.pack("<ffff", 2e9, 0.5, 1.0, 1.0)
        )
        flow, unknown = load_flow(path)
        assert flow.u[0, 0] == 0.0
        assert flow.v[0, 0] == 0.5  # only the offending component is dropped
        assert unknown.bits.tolist() == [[True, False]]

    def test_bad_magic_names_offset(self, tmp_path):
        path = tmp_path / "m.flo"
        path.write_bytes(struct.pack("<f", 1.0) + self.GOLDEN[4:])
        with pytest.raises(FileFormatError, match="magic.*byte 0"):
            load_flow(path)

    def test_short_header_names_byte_counts(self, tmp_path):
        path = tmp_path / "s.flo"
        path.write_bytes(self.GOLDEN[:10])
        with pytest.raises(FileFormatError, match="12 bytes, file has 10"):
            load_flow(path)

    def test_truncated_body_names_byte_counts(self, tmp_path):
        path = tmp_path / "t.flo"
        path.write_bytes(self.GOLDEN[:-4])
        with pytest.raises(FileFormatError, match="expected 28 bytes for 2x1, got 24"):
            load_flow(path)

    def test_nonsense_dimensions(self, tmp_path):
        path = tmp_path / "d.flo"
        path.write_bytes(struct.pack("<f", 202021.25) + struct.pack("<ii", -3, 1))
        with pytest.raises(FileFormatError, match="dimensions"):
            load_flow(path)

    def test_roundtrip_random_field(self, tmp_path):
        rng = np.random.default_rng(7)
        flow = FlowField(rng.standard_normal((6, 5)).astype(np.float32),
                         rng.standard_normal((6, 5)).astype(np.float32))
        path = tmp_path / "r.flo"
        save_flow(path, flow)
        back, unknown = load_flow(path)
        assert np.array_equal(back.u, flow.u)
        assert np.array_equal(back.v, flow.v)
        assert unknown.count == 0


class TestComposeFlows:
    def test_constant_hops_add(self):
        first = FlowField.constant(8, 8, 1.0, 2.0)
        second = FlowField.constant(8, 8, 3.0, 1.0)
        flow, occ = compose_flows(first, second)
        assert np.all(flow.u == 4.0)
        assert np.all(flow.v == 3.0)
        # stepping off-grid happens exactly where p + first leaves the image
        expect = np.zeros((8, 8), bool)
        expect[:, 7] = True   # x + 1 > 7
        expect[6:, :] = True  # y + 2 > 7
        assert np.array_equal(occ.bits, expect)

    def test_varying_second_sampled_at_intermediate(self):
        h = w = 8
        yy, xx = np.mgrid[0:h, 0:w]
        first = FlowField.constant(h, w, 1.0, 0.0)
        second = FlowField(xx.astype(np.float32), np.zeros((h, w), np.float32))
        flow, _ = compose_flows(first, second)
        # interior: u(p) = 1 + (x + 1)
        assert flow.u[3, 3] == pytest.approx(5.0)
        assert flow.u[0, 0] == pytest.approx(2.0)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(ValueError, match="grids differ"):
            compose_flows(FlowField.zero(4, 4), FlowField.zero(4, 5))


def _write_clip(tmp_path, n=3, size=16, du=3.0, frames=None, pairs=None,
                occlusions=None, extra=None):
    """Lay out a clip directory with constant flows u = (i - j) * du."""
    doc = {"frames": [], "flows": {}, "occlusions": {}}
    for k in range(n):
        name = f"f{k}.png"
        if frames is None:
            data = Frame.constant(size, size, (k + 1) / (n + 1))
        else:
            data = frames[k]
        save_frame_png(tmp_path / name, data)
        doc["frames"].append(name)
    all_pairs = [(j, i) for i in range(n) for j in range(n) if j != i]
    for j, i in (pairs if pairs is not None else all_pairs):
        name = f"flow_{j}_{i}.flo"
        save_flow(tmp_path / name, FlowField.constant(size, size, (i - j) * du, 0.0))
        doc["flows"][f"{j}->{i}"] = name
    for j, i in occlusions or []:
        name = f"occ_{j}_{i}.png"
        save_mask_png(tmp_path / name, OcclusionMask.empty(size, size))
        doc["occlusions"][f"{j}->{i}"] = name
    doc.update(extra or {})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


class TestManifest:
    def test_parses_pairs_and_resolves_paths(self, tmp_path):
        path = _write_clip(tmp_path, n=2, pairs=[(0, 1), (1, 0)],
                           occlusions=[(0, 1)])
        manifest = load_manifest(path)
        assert len(manifest.frames) == 2
        assert manifest.frames[0] == tmp_path / "f0.png"
        assert set(manifest.flows) == {(0, 1), (1, 0)}
        assert manifest.flows[(0, 1)] == tmp_path / "flow_0_1.flo"
        assert set(manifest.occlusions) == {(0, 1)}
        assert manifest.compose_missing is False

    def test_options_parsed(self, tmp_path):
        path = _write_clip(tmp_path, n=2, pairs=[(0, 1), (1, 0)], extra={
            "compose_missing": True,
            "occlusion_tolerance_px": 2.5,
            "occlusion_dilation": 2,
        })
        manifest = load_manifest(path)
        assert manifest.compose_missing is True
        assert manifest.occlusion_tolerance_px == 2.5
        assert manifest.occlusion_dilation == 2

    def test_malformed_pair_key(self, tmp_path):
        path = _write_clip(tmp_path, n=2, pairs=[(0, 1), (1, 0)],
                           extra={"flows": {"x->1": "flow_0_1.flo"}})
        with pytest.raises(FileFormatError, match="'x->1'"):
            load_manifest(path)

    def test_self_pair_rejected(self, tmp_path):
        path = _write_clip(tmp_path, n=2, pairs=[(0, 1), (1, 0)],
                           extra={"flows": {"1->1": "flow_0_1.flo"}})
        with pytest.raises(FileFormatError, match="'1->1'"):
            load_manifest(path)

    def test_no_frames(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps({"frames": []}))
        with pytest.raises(FileFormatError, match="no frames"):
            load_manifest(path)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "manifest.json"
        path.write_text("{nope")
        with pytest.raises(FileFormatError):
            load_manifest(path)


class TestLoadClip:
    def test_full_table_roundtrip(self, tmp_path):
        clip = synth.translate(n=3, size=32)
        manifest_path = synth.save_clip(clip, tmp_path)
        loaded = load_clip(load_manifest(manifest_path))
        assert len(loaded.frames) == 3
        for got, src in zip(loaded.frames, clip.frames):
            assert np.abs(got.data - src.data).max() <= 0.5 / 255 + 1e-7
        for pair, flow in clip.flows.items():
            assert np.array_equal(loaded.flows[pair].u, flow.u)
            assert np.array_equal(loaded.flows[pair].v, flow.v)

    def test_composes_missing_pairs_from_consecutive(self, tmp_path):
        n, size, du = 3, 24, 3.0
        consecutive = [(0, 1), (1, 0), (1, 2), (2, 1)]
        path = _write_clip(tmp_path, n=n, size=size, du=du, pairs=consecutive,
                           extra={"compose_missing": True})
        clip = load_clip(load_manifest(path))
        assert set(clip.flows) == {(j, i) for i in range(n) for j in range(n) if j != i}
        # chained entry carries the summed displacement
        assert clip.flows[(0, 2)].u[5, 5] == pytest.approx(2 * du)
        assert clip.flows[(2, 0)].u[5, 5] == pytest.approx(-2 * du)
        # occluded strip where sampling leaves the image: u = +6 puts the
        # rightmost 6 columns off-grid, interior stays trusted
        occ = clip.occlusions[(0, 2)]
        assert occ.bits[:, size - 1].all()
        assert not occ.bits[:, : size - 7].any()

    def test_missing_pair_without_compose_is_an_error(self, tmp_path):
        path = _write_clip(tmp_path, n=2, pairs=[(0, 1)])
        with pytest.raises(FileFormatError,
                           match=r"pair \(1, 0\) and compose_missing is off"):
            load_clip(load_manifest(path))

    def test_missing_consecutive_hop_named(self, tmp_path):
        path = _write_clip(tmp_path, n=3, pairs=[(0, 1), (1, 0)],
                           extra={"compose_missing": True})
        with pytest.raises(FileFormatError, match="missing consecutive flow"):
            load_clip(load_manifest(path))

    def test_mixed_frame_sizes_name_the_file(self, tmp_path):
        frames = [Frame.constant(16, 16, 0.5), Frame.constant(16, 18, 0.5)]
        path = _write_clip(tmp_path, n=2, frames=frames, pairs=[(0, 1), (1, 0)])
        with pytest.raises(FileFormatError, match=r"f1\.png.*18x16"):
            load_clip(load_manifest(path))

    def test_flow_size_mismatch_named(self, tmp_path):
        path = _write_clip(tmp_path, n=2, size=16, pairs=[(0, 1), (1, 0)])
        save_flow(tmp_path / "flow_0_1.flo", FlowField.zero(16, 20))
        with pytest.raises(FileFormatError, match=r"flow_0_1\.flo.*20x16"):
            load_clip(load_manifest(path))

    def test_unknown_flow_vectors_become_occlusion(self, tmp_path):
        size = 16
        path = _write_clip(tmp_path, n=2, size=size, du=0.0,
                           occlusions=[(0, 1), (1, 0)])
        u = np.zeros((size, size), np.float32)
        u[4, 5] = 2e9
        save_flow(tmp_path / "flow_0_1.flo", FlowField(u, np.zeros_like(u)))
        clip = load_clip(load_manifest(path))
        assert clip.occlusions[(0, 1)].bits[4, 5]
        assert clip.occlusions[(0, 1)].count == 1
        assert clip.flows[(0, 1)].u[4, 5] == 0.0

    def test_dilation_grows_file_masks(self, tmp_path):
        size = 16
        path = _write_clip(tmp_path, n=2, size=size, du=0.0,
                           occlusions=[(0, 1), (1, 0)],
                           extra={"occlusion_dilation": 1})
        bits = np.zeros((size, size), bool)
        bits[8, 8] = True
        save_mask_png(tmp_path / "occ_0_1.png", OcclusionMask(bits))
        clip = load_clip(load_manifest(path))
        assert clip.occlusions[(0, 1)].count == 9

    def test_forward_backward_check_fills_missing_masks(self, tmp_path):
        size = 16
        path = _write_clip(tmp_path, n=2, size=size, du=2.0)
        # inconsistent reverse flow: forward +2, backward +2 (should be -2)
        save_flow(tmp_path / "flow_1_0.flo", FlowField.constant(size, size, 2.0, 0.0))
        clip = load_clip(load_manifest(path))
        assert clip.occlusions[(0, 1)].bits.all()

    def test_consistent_flows_yield_clean_masks(self, tmp_path):
        size = 16
        path = _write_clip(tmp_path, n=2, size=size, du=2.0)
        clip = load_clip(load_manifest(path))
        # off-image strip is flagged, interior is trusted
        assert not clip.occlusions[(0, 1)].bits[:, : size - 3].any()
        assert clip.occlusions[(0, 1)].bits[:, size - 1].all()
