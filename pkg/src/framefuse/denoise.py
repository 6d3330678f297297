"""Pluggable denoisers: the analytic toy model, an identity pass-through,
and the client-side wrapper for external denoiser processes."""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from .image import Frame

DEFAULT_TOY_LAMBDA = 0.3
_TINT_STREAM = 101


class Denoiser(Protocol):
    def predict_batch(
        self, x_t: Sequence[Frame], t_index: int, t_value: int, alpha_bar: float
    ) -> list[Frame]: ...

    def close(self) -> None: ...


def plant_targets(video: Sequence[Frame], seed: int, tint: float = 0.12) -> list[Frame]:
    """Deterministic stand-in stylization of the input clip.

    Each frame gets a fixed channel rotation plus a per-frame color cast
    drawn from (seed, frame_index), so unfused sampling flickers by
    construction while per-frame texture is untouched (the cast is additive,
    leaving high-frequency content identical across frames).
    """
    out = []
    for i, frame in enumerate(video):
        data = frame.data
        if frame.channels == 3:
            data = np.roll(data, 1, axis=-1)
        cast = np.random.default_rng([seed, _TINT_STREAM, i]).uniform(
            -tint, tint, size=frame.channels
        )
        out.append(Frame((data + cast).astype(np.float32)))
    return out


class ToyDenoiser:
    """Analytic denoiser that relaxes toward a planted per-frame target.

    x0_hat = P_i + lam(t) * (x_t / sqrt(alpha_bar) - P_i) with
    lam(t) = (1 - alpha_bar) * lambda0: early (noisy) steps lean on the
    rescaled state, late steps converge to the target exactly.
    """

    def __init__(self, targets: Sequence[Frame], lambda0: float = DEFAULT_TOY_LAMBDA):
        if not targets:
            raise ValueError("at least one target frame required")
        if not 0.0 <= lambda0 <= 1.0:
            raise ValueError("lambda0 must lie in [0, 1]")
        self.targets = list(targets)
        self.lambda0 = lambda0

    @classmethod
    def from_video(cls, video: Sequence[Frame], seed: int,
                   lambda0: float = DEFAULT_TOY_LAMBDA) -> "ToyDenoiser":
        return cls(plant_targets(video, seed), lambda0)

    def predict_batch(self, x_t, t_index, t_value, alpha_bar):
        if len(x_t) != len(self.targets):
            raise ValueError(
                f"got {len(x_t)} frames but {len(self.targets)} planted targets"
            )
        lam = (1.0 - alpha_bar) * self.lambda0
        root = np.sqrt(alpha_bar)
        out = []
        for frame, target in zip(x_t, self.targets):
            p = target.data.astype(np.float64)
            x0 = p + lam * (frame.data.astype(np.float64) / root - p)
            out.append(Frame(x0.astype(np.float32)))
        return out

    def close(self):
        pass


class IdentityDenoiser:
    """Returns the noisy states unchanged; the in-engine twin of an
    echo responder, used to pin down protocol conformance."""

    def predict_batch(self, x_t, t_index, t_value, alpha_bar):
        return list(x_t)

    def close(self):
        pass


class BridgeDenoiser:
    """Forwards batches to an external denoiser over the wire protocol."""

    def __init__(self, client, conditioning: bytes = b"", run_token: int | None = None):
        from . import bridge  # local import; bridge depends on nothing here

        self._client = client
        self._conditioning = conditioning
        self._token = (
            run_token
            if run_token is not None
            else int(np.random.default_rng().integers(0, 2**63))
        )
        self._bridge = bridge

    def predict_batch(self, x_t, t_index, t_value, alpha_bar):
        tensor = np.stack([f.data for f in x_t]).astype("<f4")
        reply = self._client.request(
            self._token, t_index, t_value, tensor, self._conditioning
        )
        if reply.shape != tensor.shape:
            raise self._bridge.BridgeError(
                f"response tensor shape {reply.shape} does not match request {tensor.shape}"
            )
        return [Frame(reply[i]) for i in range(reply.shape[0])]

    def close(self):
        self._client.close()
