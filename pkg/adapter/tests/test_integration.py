"""End-to-end checks against live processes.

The stdio tests talk to ``python -m denoiser_adapter`` as a subprocess;
the engine test drives the framefuse CLI (if installed) with this
adapter configured as its external denoiser and expects byte-identical
output to the engine's built-in identity run.
"""

import shutil
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from denoiser_adapter import protocol

HAVE_ENGINE = shutil.which("framefuse") is not None


def _adapter(*extra):
    return subprocess.Popen(
        [sys.executable, "-m", "denoiser_adapter", *extra],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE,
        stderr=subprocess.PIPE)


def _exchange(proc, frame):
    proc.stdin.write(frame)
    proc.stdin.flush()
    reader = protocol.FrameReader(proc.stdout)
    return reader.next_frame()


def test_stdio_echo_subprocess():
    tensor = np.random.default_rng(4).random((2, 8, 8, 3), dtype=np.float32)
    proc = _adapter()
    try:
        frame = protocol.encode_request(
            protocol.Request(77, 3, 600, b"prompt=x", tensor))
        _, version, msg_type, payload = _exchange(proc, frame)
        assert msg_type == protocol.MSG_RESPONSE
        token, t_index, n = struct.unpack_from("<QII", payload)
        assert (token, t_index, n) == (77, 3, 2)
        out = np.frombuffer(payload[16:], dtype="<f4").reshape(tensor.shape)
        assert out.tobytes() == tensor.tobytes()
    finally:
        proc.stdin.close()
        proc.wait(timeout=10)
    assert proc.returncode == 0


def test_stdio_survives_garbage_between_requests():
    tensor = np.full((1, 2, 2, 3), 0.5, dtype=np.float32)
    req = protocol.encode_request(protocol.Request(1, 0, 500, b"", tensor))
    proc = _adapter()
    try:
        proc.stdin.write(req + b"oops, stray bytes" + req)
        proc.stdin.flush()
        proc.stdin.close()
        reader = protocol.FrameReader(proc.stdout)
        kinds = []
        while (item := reader.next_frame()) is not None:
            kinds.append(item[2])
        assert kinds == [protocol.MSG_RESPONSE, protocol.MSG_ERROR,
                         protocol.MSG_RESPONSE]
    finally:
        proc.wait(timeout=10)


@pytest.mark.skipif(not HAVE_ENGINE, reason="framefuse CLI not installed")
def test_engine_run_through_adapter_matches_identity(tmp_path):
    synth = subprocess.run(
        ["framefuse", "synth", "--scenario", "translate",
         "--out-dir", str(tmp_path / "clip")],
        check=True, capture_output=True, text=True)
    manifest = Path(synth.stdout.strip())
    assert manifest.is_file()

    def run(name, lines):
        out_dir = tmp_path / name
        config = tmp_path / f"{name}.cfg"
        config.write_text("\n".join(lines) + "\n")
        subprocess.run(
            ["framefuse", "run", "--manifest", str(manifest),
             "--config", str(config), "--out-dir", str(out_dir)],
            check=True, capture_output=True, text=True)
        return sorted(out_dir.glob("*.png"))

    base = ["n_steps = 6", "seed = 11", "denoiser = identity"]
    identity = run("identity", base)
    bridged = run("bridged", base[:2] + [
        "denoiser = bridge",
        f"bridge_command = {sys.executable} -m denoiser_adapter --mode echo",
    ])
    assert [p.name for p in identity] == [p.name for p in bridged]
    for a, b in zip(identity, bridged):
        assert a.read_bytes() == b.read_bytes(), f"{a.name} differs"
