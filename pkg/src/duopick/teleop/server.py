"""Fixed-rate teleop control loop over WebSockets.

One asyncio task owns both arms' joint state and ticks at a fixed rate;
message handlers never touch joint angles directly. Each arm has a single
command slot with last-writer-wins semantics, so ingestion at any rate costs
the loop one dictionary read per tick, and state fan-out uses a non-blocking
broadcast that drops frames to slow clients rather than stalling the tick.
Plain HTTP requests on the same port serve the browser console and the
kinematic description it needs for client-side FK.
"""

from __future__ import annotations

import asyncio
import enum
import errno
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from websockets.asyncio.server import broadcast, serve as ws_serve
from websockets.datastructures import Headers
from websockets.exceptions import ConnectionClosed
from websockets.http11 import Response

from ..arm import chain_to_dict
from ..errors import ConfigError, PortInUse
from ..sim.scene import default_scene
from .messages import (
    ARMS,
    EStop,
    JointCommand,
    Ping,
    Pong,
    Release,
    SeqGate,
    StateUpdate,
    Takeover,
    decode_message,
    encode_message,
)

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}

_PLACEHOLDER_PAGE = b"""<!doctype html>
<html><head><meta charset="utf-8"><title>duopick teleop</title></head>
<body><h1>duopick teleop server</h1>
<p>No console bundle is installed. Build the frontend and pass its output
directory via --static, or connect a WebSocket client directly.</p>
</body></html>
"""


class ControlSource(enum.Enum):
    """Who commands an arm during one tick."""

    AUTONOMY = "autonomy"
    TELEOP = "teleop"
    FROZEN = "frozen"


def arbitrate(taken: bool, paused: bool, estop: bool) -> ControlSource:
    """Resolve one arm's control source for one tick.

    An emergency stop overrides everything. A held takeover routes the
    operator's command slot. A paused arm without an operator (takeover
    ended by disconnect rather than release) stays frozen until explicitly
    resumed. Otherwise the autonomy stream drives the arm.
    """
    if estop:
        return ControlSource.FROZEN
    if taken:
        return ControlSource.TELEOP
    if paused:
        return ControlSource.FROZEN
    return ControlSource.AUTONOMY


@dataclass(frozen=True)
class ControlLoopConfig:
    """Timing and safety limits for the teleop control loop."""

    rate_hz: float = 100.0       # control loop frequency
    command_hz: float = 40.0     # expected client command rate
    max_step: float = 0.02       # per-tick joint step bound, rad
    stale_ms: float = 250.0      # commands older than this hold the arm

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ConfigError("rate_hz must be positive")
        if not self.command_hz > 0:
            raise ConfigError("command_hz must be positive")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive")
        if not self.stale_ms > 0:
            raise ConfigError("stale_ms must be positive")


@dataclass
class _Slot:
    """Single-slot command mailbox: the newest accepted target wins."""

    target: Optional[np.ndarray] = None
    stamp: float = 0.0


@dataclass
class _ArmState:
    q: np.ndarray
    owner: Optional[int] = None      # connection id holding the takeover
    paused: bool = False             # autonomy suspended (takeover or orphaned)
    attached: bool = False
    seq: int = 0                     # outbound state sequence
    slot: _Slot = field(default_factory=_Slot)


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class TeleopServer:
    """WebSocket teleop endpoint around a fixed-rate dual-arm control loop.

    The server owns a joint vector per arm, seeded from the scene's home
    configuration. ``autonomy`` may supply per-tick targets for arms nobody
    has taken over: a callable (arm, q, tick) returning a target vector or
    None to hold. Joint targets from any source are clamped to joint limits
    and approached at most ``max_step`` per joint per tick.
    """

    def __init__(self, scene=None, cfg: ControlLoopConfig = None,
                 autonomy=None, static_dir=None):
        self.scene = scene if scene is not None else default_scene()
        self.cfg = cfg if cfg is not None else ControlLoopConfig()
        self.autonomy = autonomy
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.arms = {
            arm: _ArmState(q=self.scene.home[arm].copy()) for arm in ARMS
        }
        self.estop = False
        self.ticks = 0
        self.port = None
        self._chains = {arm: self.scene.arms[arm] for arm in ARMS}
        self._chain_json = json.dumps(
            {
                "arms": {arm: chain_to_dict(self._chains[arm]) for arm in ARMS},
                "home": {arm: [float(v) for v in self.scene.home[arm]] for arm in ARMS},
            },
            separators=(",", ":"),
        ).encode()
        self._conns = set()
        self._next_cid = 0
        self._gate = SeqGate()
        self._server = None
        self._tick_task = None

    # -- lifecycle ------------------------------------------------------

    async def start(self, port: int, host: str = "127.0.0.1") -> "TeleopServer":
        """Bind the endpoint and start the control loop."""
        try:
            self._server = await ws_serve(
                self._handler, host, port, process_request=self._process_request
            )
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"port {port} is already in use") from exc
            raise
        self.port = self._server.sockets[0].getsockname()[1]
        self._tick_task = asyncio.get_running_loop().create_task(self._run_loop())
        return self

    async def stop(self):
        """Stop the control loop and close the endpoint."""
        if self._tick_task is not None:
            self._tick_task.cancel()
            try:
                await self._tick_task
            except asyncio.CancelledError:
                pass
            self._tick_task = None
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc):
        await self.stop()

    # -- control loop -----------------------------------------------------

    async def _run_loop(self):
        loop = asyncio.get_running_loop()
        period = 1.0 / self.cfg.rate_hz
        next_t = loop.time() + period
        while True:
            await asyncio.sleep(max(0.0, next_t - loop.time()))
            next_t += period
            self._tick(loop.time())

    def _tick(self, now: float):
        """Advance each arm one step and broadcast state. Never awaits."""
        t_us = _now_us()
        for arm in ARMS:
            st = self.arms[arm]
            source = arbitrate(st.owner is not None, st.paused, self.estop)
            target = None
            if source is ControlSource.TELEOP:
                slot = st.slot
                if slot.target is not None and (now - slot.stamp) * 1e3 <= self.cfg.stale_ms:
                    target = slot.target
            elif source is ControlSource.AUTONOMY and self.autonomy is not None:
                target = self.autonomy(arm, st.q.copy(), self.ticks)
            if target is not None:
                goal = self._chains[arm].clip(target)
                step = np.clip(goal - st.q, -self.cfg.max_step, self.cfg.max_step)
                st.q = st.q + step
            st.seq += 1
            frame = encode_message(
                StateUpdate(
                    arm=arm,
                    q=tuple(float(v) for v in st.q),
                    attached=st.attached,
                    seq=st.seq,
                    t_server_us=t_us,
                )
            )
            broadcast(self._conns, frame)
        self.ticks += 1

    # -- message handling -------------------------------------------------

    async def _handler(self, ws):
        cid = self._next_cid
        self._next_cid += 1
        self._conns.add(ws)
        try:
            async for raw in ws:
                try:
                    msg = decode_message(raw)
                except ValueError:
                    continue  # malformed frames never reach the loop
                await self._dispatch(ws, cid, msg)
        except ConnectionClosed:
            pass  # yanked connections get the same cleanup as clean closes
        finally:
            self._conns.discard(ws)
            for st in self.arms.values():
                if st.owner == cid:
                    # operator vanished: drop the takeover but stay frozen
                    st.owner = None
                    st.slot = _Slot()

    async def _dispatch(self, ws, cid: int, msg):
        loop = asyncio.get_running_loop()
        if isinstance(msg, Ping):
            await ws.send(encode_message(Pong(nonce=msg.nonce, t_server_us=_now_us())))
            return
        if isinstance(msg, Takeover):
            st = self.arms[msg.arm]
            if st.owner is None or st.owner == cid:
                st.owner = cid
                st.paused = True
            return
        if isinstance(msg, Release):
            st = self.arms[msg.arm]
            if st.owner == cid:
                st.owner = None
                st.paused = False
                st.slot = _Slot()
            return
        if isinstance(msg, EStop):
            self.estop = True
            return
        if isinstance(msg, JointCommand):
            st = self.arms[msg.arm]
            if st.owner != cid:
                return  # only the takeover holder may command the arm
            if not self._gate.accept((cid, msg.arm), msg.seq):
                return  # replayed or reordered command
            st.slot = _Slot(target=np.asarray(msg.q, dtype=float), stamp=loop.time())
            return
        # state and pong frames are server-origin; ignore them from clients

    # -- plain HTTP -------------------------------------------------------

    def _respond(self, status: int, body: bytes, ctype: str) -> Response:
        reason = {200: "OK", 404: "Not Found", 405: "Method Not Allowed"}[status]
        headers = Headers(
            [
                ("Content-Type", ctype),
                ("Content-Length", str(len(body))),
                ("Cache-Control", "no-store"),
            ]
        )
        return Response(status, reason, headers, body)

    def _process_request(self, connection, request):
        if request.headers.get("Upgrade", "").lower() == "websocket":
            return None  # continue the WebSocket handshake
        path = request.path.split("?", 1)[0]
        if path == "/chain.json":
            return self._respond(200, self._chain_json, "application/json")
        if self.static_dir is not None:
            rel = "index.html" if path == "/" else path.lstrip("/")
            candidate = (self.static_dir / rel).resolve()
            if (
                candidate.is_relative_to(self.static_dir)
                and candidate.is_file()
            ):
                ctype = _CONTENT_TYPES.get(candidate.suffix, "application/octet-stream")
                return self._respond(200, candidate.read_bytes(), ctype)
        if path == "/":
            return self._respond(200, _PLACEHOLDER_PAGE, "text/html; charset=utf-8")
        return self._respond(404, b"not found\n", "text/plain; charset=utf-8")


async def serve_teleop(port: int, host: str = "127.0.0.1", scene=None,
                       cfg: ControlLoopConfig = None, autonomy=None,
                       static_dir=None) -> TeleopServer:
    """Start a TeleopServer; the caller stops it with await server.stop()."""
    server = TeleopServer(scene=scene, cfg=cfg, autonomy=autonomy, static_dir=static_dir)
    return await server.start(port, host=host)


def run_server(port: int, host: str = "127.0.0.1", rate_hz: float = 100.0,
               static_dir=None):
    """Run a teleop server until interrupted (blocking convenience)."""
    cfg = ControlLoopConfig(rate_hz=rate_hz)

    async def main():
        server = await serve_teleop(port, host=host, cfg=cfg, static_dir=static_dir)
        try:
            await asyncio.Event().wait()
        finally:
            await server.stop()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
