"""Per-run session state.

A run is identified by the request's ``run_token``; every request in a
run carries the same conditioning blob, so it is parsed once on first
contact and cached.  Conditioning is UTF-8 ``key=value`` lines; a line
without ``=`` is taken as the prompt, later keys win, unknown keys are
kept verbatim in ``extras``.  Blobs that do not decode as UTF-8 are
treated as empty (the echo path never looks at them anyway).
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Conditioning:
    prompt: str = ""
    guidance_scale: float = 7.5
    negative_prompt: str = ""
    extras: dict[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, raw: bytes) -> "Conditioning":
        cond = cls()
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            return cond
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                cond.prompt = line
                continue
            key, value = line.split("=", 1)
            key = key.strip().lower()
            value = value.strip()
            if key == "prompt":
                cond.prompt = value
            elif key == "negative_prompt":
                cond.negative_prompt = value
            elif key == "guidance_scale":
                try:
                    cond.guidance_scale = float(value)
                except ValueError:
                    cond.extras[key] = value
            else:
                cond.extras[key] = value
        return cond


@dataclass
class BridgeSession:
    run_token: int
    conditioning: Conditioning
    backend_state: dict = field(default_factory=dict)
    requests_served: int = 0


class SessionManager:
    def __init__(self):
        self._sessions: dict[int, BridgeSession] = {}

    def get(self, run_token: int, raw_conditioning: bytes) -> BridgeSession:
        session = self._sessions.get(run_token)
        if session is None:
            session = BridgeSession(run_token, Conditioning.parse(raw_conditioning))
            self._sessions[run_token] = session
        return session
