import io
import struct

import numpy as np
import pytest

from denoiser_adapter import protocol

# Hand-assembled request: run 7, step 3 at t=950, one 1x1x1x1 frame of 0.5
# with conditioning b"ab".  Any conforming encoder must emit these bytes.
GOLDEN_PAYLOAD = (
    b"\x07\x00\x00\x00\x00\x00\x00\x00"
    b"\x03\x00\x00\x00"
    b"\xb6\x03\x00\x00"
    b"\x01\x00\x00\x00" b"\x01\x00\x00\x00" b"\x01\x00\x00\x00" b"\x01\x00\x00\x00"
    b"\x02\x00\x00\x00" b"ab"
    b"\x00\x00\x00\x3f"
)
GOLDEN_MESSAGE = (
    b"SMFD" b"\x01\x00" b"\x01\x00" b"\x2a\x00\x00\x00\x00\x00\x00\x00"
) + GOLDEN_PAYLOAD


def _golden_request():
    return protocol.Request(
        run_token=7, t_index=3, t_value=950, conditioning=b"ab",
        tensor=np.full((1, 1, 1, 1), 0.5, dtype=np.float32))


def test_encode_request_matches_golden_bytes():
    assert protocol.encode_request(_golden_request()) == GOLDEN_MESSAGE


def test_decode_request_golden_payload():
    req = protocol.decode_request(GOLDEN_PAYLOAD)
    assert req.run_token == 7
    assert req.t_index == 3
    assert req.t_value == 950
    assert req.conditioning == b"ab"
    assert req.tensor.shape == (1, 1, 1, 1)
    assert req.tensor.dtype == np.float32
    assert req.tensor[0, 0, 0, 0] == 0.5


def test_request_roundtrip_preserves_values():
    rng = np.random.default_rng(3)
    tensor = rng.standard_normal((2, 5, 4, 3)).astype(np.float32)
    req = protocol.Request(99, 11, 400, b"prompt=hi", tensor)
    out = protocol.decode_request(protocol.encode_request(req)[16:])
    assert out.run_token == 99 and out.t_index == 11 and out.t_value == 400
    assert out.conditioning == b"prompt=hi"
    np.testing.assert_array_equal(out.tensor, tensor)


def test_encode_request_accepts_strided_view():
    base = np.arange(48, dtype=np.float32).reshape(1, 4, 4, 3)
    view = base[:, ::2, ::2, :]
    assert not view.flags["C_CONTIGUOUS"]
    out = protocol.decode_request(
        protocol.encode_request(protocol.Request(1, 0, 0, b"", view))[16:])
    np.testing.assert_array_equal(out.tensor, view)


def test_encode_request_rejects_wrong_rank():
    with pytest.raises(ValueError, match="4-d"):
        protocol.encode_request(
            protocol.Request(1, 0, 0, b"", np.zeros((2, 2), dtype=np.float32)))


def test_response_layout():
    tensor = np.array([[[[1.0, 2.0]]]], dtype=np.float32)
    frame = protocol.encode_response(9, 4, tensor)
    assert frame[:4] == protocol.MAGIC
    version, msg_type, length = struct.unpack_from("<HHQ", frame, 4)
    assert (version, msg_type) == (1, protocol.MSG_RESPONSE)
    assert length == len(frame) - 16
    token, t_index, n = struct.unpack_from("<QII", frame, 16)
    assert (token, t_index, n) == (9, 4, 1)
    np.testing.assert_array_equal(
        np.frombuffer(frame[32:], dtype="<f4"), [1.0, 2.0])


def test_error_layout():
    frame = protocol.encode_error(5, "backend oom")
    version, msg_type, length = struct.unpack_from("<HHQ", frame, 4)
    assert (version, msg_type) == (1, protocol.MSG_ERROR)
    assert struct.unpack_from("<Q", frame, 16)[0] == 5
    assert frame[24:] == b"backend oom"
    assert length == 8 + len(b"backend oom")


def test_decode_rejects_short_payload():
    with pytest.raises(protocol.ProtocolError, match="at least 36 bytes, got 10"):
        protocol.decode_request(GOLDEN_PAYLOAD[:10])


def test_decode_rejects_conditioning_overrun():
    payload = GOLDEN_PAYLOAD[:32] + struct.pack("<I", 50) + b"ab"
    with pytest.raises(protocol.ProtocolError,
                       match="expected 50 bytes, got 2"):
        protocol.decode_request(payload)


def test_decode_rejects_truncated_tensor():
    payload = GOLDEN_PAYLOAD[:32] + struct.pack("<I", 0) + b"\x00" * 2
    with pytest.raises(protocol.ProtocolError, match="expected 4 bytes, got 2"):
        protocol.decode_request(payload)


def test_decode_rejects_zero_dimension():
    fixed = struct.pack("<QIIIIIII", 1, 0, 0, 1, 0, 4, 3, 0)
    with pytest.raises(protocol.ProtocolError, match="zero tensor dimension"):
        protocol.decode_request(fixed)


def test_peek_token():
    assert protocol.peek_token(GOLDEN_PAYLOAD) == 7
    assert protocol.peek_token(b"\x01\x02") == 0


def _frames(stream_bytes):
    reader = protocol.FrameReader(io.BytesIO(stream_bytes))
    out = []
    while True:
        item = reader.next_frame()
        if item is None:
            return out
        out.append(item)


def test_reader_clean_stream():
    frames = _frames(GOLDEN_MESSAGE * 3)
    assert len(frames) == 3
    for skipped, version, msg_type, payload in frames:
        assert skipped == 0
        assert (version, msg_type) == (1, protocol.MSG_REQUEST)
        assert payload == GOLDEN_PAYLOAD


def test_reader_skips_garbage_and_reports_count():
    frames = _frames(b"\xde\xad\xbe\xef\x00" + GOLDEN_MESSAGE)
    assert len(frames) == 1
    assert frames[0][0] == 5
    assert frames[0][3] == GOLDEN_PAYLOAD


def test_reader_resynchronizes_between_frames():
    stream = GOLDEN_MESSAGE + b"junkjunk" + GOLDEN_MESSAGE
    frames = _frames(stream)
    assert [f[0] for f in frames] == [0, 8]


def test_reader_handles_partial_magic_in_garbage():
    # "SMF" never completes; the real frame afterwards must still be found
    frames = _frames(b"SMFxSM" + GOLDEN_MESSAGE)
    assert len(frames) == 1
    assert frames[0][0] == 6


def test_reader_drops_frame_cut_by_eof():
    frames = _frames(GOLDEN_MESSAGE + GOLDEN_MESSAGE[:20])
    assert len(frames) == 1


def test_reader_magic_straddles_read_chunks():
    class OneByteStream:
        def __init__(self, data):
            self._data = io.BytesIO(data)

        def read(self, n):
            return self._data.read(1)

    reader = protocol.FrameReader(OneByteStream(b"xx" + GOLDEN_MESSAGE))
    skipped, _, _, payload = reader.next_frame()
    assert skipped == 2
    assert payload == GOLDEN_PAYLOAD
    assert reader.next_frame() is None
