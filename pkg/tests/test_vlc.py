"""
Unit tests for the VLC packet codec, blob detection and multi-path decoder.
"""
import random

import numpy as np
import pytest

from src.services.face_pipeline import TrackedFace
from src.services.observations import BBox, Command, LuminanceBlob
from src.services.optics import CameraModel
from src.services.vlc import (
    Blob,
    PACKET_BITS,
    VlcConfig,
    crc4,
    decode_packet,
    detect_blobs,
    encode_packet,
    payload_width,
    rasterize_region,
    search_region_for_face,
    step_decoder,
    try_resolve,
    ViterbiPath,
)


def _crc_long_division(payload: int, width: int = 8, generator=(1, 0, 0, 1, 1)) -> int:
    """Reference CRC: polynomial long division of payload * x^4, bit by bit."""
    bits = [int(b) for b in format(payload, f"0{width}b")] + [0, 0, 0, 0]
    for i in range(width):
        if bits[i]:
            for j, g in enumerate(generator):
                bits[i + j] ^= g
    return int("".join(str(b) for b in bits[-4:]), 2)


class TestCrc:
    def test_known_values(self):
        assert crc4(0x01) == 0x3
        assert crc4(0x02) == 0x6

    def test_matches_long_division_for_every_byte(self):
        for payload in range(256):
            assert crc4(payload) == _crc_long_division(payload), payload


class TestPacketCodec:
    def test_blur_packet_layout(self):
        assert encode_packet(Command.BLUR) == "101011000000010011"
        assert encode_packet(Command.UNBLUR) == "101011000000100110"

    @pytest.mark.parametrize("command", [Command.BLUR, Command.UNBLUR])
    def test_decode_valid(self, command):
        assert decode_packet(encode_packet(command)) == (command, "ok")

    @pytest.mark.parametrize("command", [Command.BLUR, Command.UNBLUR])
    def test_every_single_bit_flip_rejected(self, command):
        packet = encode_packet(command)
        for i in range(PACKET_BITS):
            flipped = packet[:i] + ("0" if packet[i] == "1" else "1") + packet[i + 1:]
            decoded, reason = decode_packet(flipped)
            assert decoded is None, f"flip at {i} accepted"
            assert reason in ("preamble", "crc", "unknown_command")

    def test_wrong_length(self):
        assert decode_packet("10101100000001001") == (None, "length")

    def test_unknown_command_with_valid_crc(self):
        bits = "101011" + format(0x03, "08b") + format(crc4(0x03), "04b")
        assert decode_packet(bits) == (None, "unknown_command")

    @pytest.mark.parametrize("n", [14, 16, 20, 22, 24, 26])
    def test_other_lengths(self, n):
        packet = encode_packet(Command.UNBLUR, n)
        assert len(packet) == n
        assert decode_packet(packet, n) == (Command.UNBLUR, "ok")

    def test_too_short_for_a_command(self):
        with pytest.raises(ValueError):
            payload_width(11)


class TestBlobs:
    def test_four_connectivity(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 0] = mask[0, 1] = mask[1, 0] = True
        mask[2, 2] = True          # diagonal neighbour only: separate blob
        mask[4, 3] = mask[4, 4] = True
        blobs = detect_blobs(mask, origin=(10, 20))
        assert sorted(b.area for b in blobs) == [1, 2, 3]
        single = next(b for b in blobs if b.area == 1)
        assert single.centroid == (12.5, 22.5)

    def test_rendered_led_round_trips(self):
        cam = CameraModel()
        face = TrackedFace(face_id=1, bbox=BBox.from_pixels(612, 444, 56, 72, 1280, 960), last_seen_ms=0, first_seen_ms=0)
        region = search_region_for_face(face, cam)
        led = LuminanceBlob((640.0, 580.0), 44)
        mask, origin = rasterize_region([led], region, cam)
        (blob,) = detect_blobs(mask, origin)
        assert blob.area == 44
        assert blob.centroid[0] == pytest.approx(640.0, abs=0.5)
        assert blob.centroid[1] == pytest.approx(580.0, abs=0.5)

    def test_blob_outside_region_ignored(self):
        cam = CameraModel()
        face = TrackedFace(face_id=1, bbox=BBox.from_pixels(612, 444, 56, 72, 1280, 960), last_seen_ms=0, first_seen_ms=0)
        region = search_region_for_face(face, cam)
        mask, origin = rasterize_region([LuminanceBlob((100.0, 580.0), 44)], region, cam)
        assert detect_blobs(mask, origin) == []

    def test_search_region_geometry(self):
        cam = CameraModel()
        face = TrackedFace(face_id=7, bbox=BBox.from_pixels(600, 400, 80, 100, 1280, 960), last_seen_ms=0, first_seen_ms=0)
        region = search_region_for_face(face, cam)
        assert region.owner_face_id == 7
        assert region.x0 * 1280 == pytest.approx(560.0)
        assert region.x1 * 1280 == pytest.approx(720.0)
        assert region.y0 * 960 == pytest.approx(500.0)
        assert region.y1 * 960 == pytest.approx(800.0)
        assert region.expected_blob_area == pytest.approx(400.0 / (215.0 / 100.0) ** 2)


class TestStepDecoder:
    def test_static_beacon_yields_packet_bits(self):
        cfg = VlcConfig()
        packet = encode_packet(Command.BLUR)
        paths = []
        for bit in packet:
            blobs = [Blob((100.0, 100.0), 44)] if bit == "1" else []
            paths = step_decoder(paths, blobs, cfg, gate_px=26.0)
        (path,) = paths
        assert path.bits == packet
        assert path.cost == packet.count("0")

    def test_far_blob_starts_new_path(self):
        cfg = VlcConfig()
        paths = step_decoder([], [Blob((100.0, 100.0), 44)], cfg, gate_px=10.0)
        paths = step_decoder(paths, [Blob((300.0, 100.0), 44)], cfg, gate_px=10.0)
        assert sorted(p.bits for p in paths) == ["1", "10"]

    def test_default_gate_does_not_grow(self):
        cfg = VlcConfig()
        paths = step_decoder([], [Blob((100.0, 100.0), 44)], cfg, gate_px=10.0)
        for _ in range(3):
            paths = step_decoder(paths, [], cfg, gate_px=10.0)
        paths = step_decoder(paths, [Blob((115.0, 100.0), 44)], cfg, gate_px=10.0)
        assert sorted(p.bits for p in paths) == ["1", "10000"]

    def test_gate_grows_with_misses(self):
        cfg = VlcConfig(max_gate_growth=4.0)
        paths = step_decoder([], [Blob((100.0, 100.0), 44)], cfg, gate_px=10.0)
        paths = step_decoder(paths, [], cfg, gate_px=10.0)
        paths = step_decoder(paths, [], cfg, gate_px=10.0)
        # two misses: radius 30
        paths = step_decoder(paths, [Blob((128.0, 100.0), 44)], cfg, gate_px=10.0)
        assert [p.bits for p in paths] == ["1001"]

    def test_gate_growth_is_capped(self):
        cfg = VlcConfig(max_gate_growth=2.0)
        paths = step_decoder([], [Blob((100.0, 100.0), 44)], cfg, gate_px=10.0)
        for _ in range(5):
            paths = step_decoder(paths, [], cfg, gate_px=10.0)
        paths = step_decoder(paths, [Blob((125.0, 100.0), 44)], cfg, gate_px=10.0)
        assert sorted(p.bits for p in paths) == ["1", "1000000"]

    def test_pruned_to_max_active_paths(self):
        cfg = VlcConfig(max_active_paths=3)
        blobs = [Blob((float(100 * i), 100.0), 4) for i in range(1, 6)]
        paths = step_decoder([], blobs, cfg, gate_px=5.0)
        assert len(paths) == 3
        assert [p.path_id for p in paths] == [1, 2, 3]


# ── Exhaustive oracle ─────────────────────────────────────────────────────

BEACON = (100.0, 100.0)
GATE = 10.0


def _make_instance(rng: random.Random):
    n = rng.randint(4, 12)
    frames = []
    for t in range(n):
        blobs = []
        if t == 0 or rng.random() < 0.6:
            blobs.append(Blob((BEACON[0] + rng.uniform(-3, 3), BEACON[1] + rng.uniform(-3, 3)), 40))
        for _ in range(rng.randint(0, 2)):
            blobs.append(Blob((rng.uniform(300, 600), rng.uniform(50, 150)), 40))
        frames.append(blobs)
    return frames


def _brute_force_min_cost(frames, cfg: VlcConfig) -> float:
    """Cheapest take/miss sequence for a path seeded by frame 0's first blob."""
    best = float("inf")

    def walk(t, pos, misses, cost):
        nonlocal best
        if t == len(frames):
            best = min(best, cost)
            return
        radius = GATE * min(1 + misses, cfg.max_gate_growth)
        for blob in frames[t]:
            if np.hypot(blob.centroid[0] - pos[0], blob.centroid[1] - pos[1]) <= radius:
                walk(t + 1, blob.centroid, 0, cost)
        walk(t + 1, pos, misses + 1, cost + cfg.miss_penalty)

    walk(1, frames[0][0].centroid, 0, 0.0)
    return best


class TestViterbiOracle:
    def test_matches_exhaustive_enumeration(self):
        rng = random.Random(2024)
        cfg = VlcConfig(max_active_paths=10_000)
        for _ in range(200):
            frames = _make_instance(rng)
            paths = []
            for blobs in frames:
                paths = step_decoder(paths, blobs, cfg, GATE)
            first = next(p for p in paths if p.path_id == 1)
            assert first.age == len(frames)
            assert first.cost == pytest.approx(_brute_force_min_cost(frames, cfg))


class TestTryResolve:
    def _make_face(self, distance_m: float = 3.0) -> TrackedFace:
        h = 215.0 / distance_m
        bbox = BBox.from_pixels(640 - 0.39 * h, 480 - h / 2, 0.78 * h, h, 1280, 960)
        return TrackedFace(face_id=1, bbox=bbox, last_seen_ms=0.0, first_seen_ms=0.0)

    def _make_path(self, bits: str, area: int) -> ViterbiPath:
        return ViterbiPath(path_id=1, bits=bits, cost=0.0, last_blob_pos=(640.0, 600.0), last_blob_area=area)

    def test_consistent_blob_resolves(self):
        path = self._make_path(encode_packet(Command.BLUR), 44)
        assert try_resolve(path, VlcConfig(), self._make_face(), CameraModel()) == Command.BLUR

    def test_near_blob_for_far_face_rejected(self):
        path = self._make_path(encode_packet(Command.BLUR), 400)
        assert try_resolve(path, VlcConfig(), self._make_face(), CameraModel()) is None

    def test_corrupt_bits_rejected(self):
        path = self._make_path("0" * PACKET_BITS, 44)
        assert try_resolve(path, VlcConfig(), self._make_face(), CameraModel()) is None

    # a 25 px² blob puts the LED at 4 m; the face sits at 4 m / ratio
    @pytest.mark.parametrize("ratio,accepted", [(1.09, True), (0.91, True), (1.11, False), (0.89, False)])
    def test_tolerance_boundary(self, ratio, accepted):
        path = self._make_path(encode_packet(Command.BLUR), 25)
        command = try_resolve(path, VlcConfig(), self._make_face(4.0 / ratio), CameraModel())
        assert (command == Command.BLUR) is accepted
