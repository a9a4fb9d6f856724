"""Teleop schema, arbitration, and control-loop behavior over live sockets."""

import asyncio
import itertools
import json
import time
import urllib.request

import numpy as np
import pytest
from websockets.asyncio.client import connect

from duopick.arm import chain_from_dict
from duopick.errors import ConfigError, PortInUse
from duopick.sim.scene import default_scene
from duopick.teleop import (
    ControlLoopConfig,
    ControlSource,
    EStop,
    JointCommand,
    Ping,
    Pong,
    Release,
    SeqGate,
    StateUpdate,
    Takeover,
    TeleopServer,
    arbitrate,
    decode_message,
    encode_message,
)

GRIPPER = "gripper"
CUTTER = "cutter"


def uri(server):
    return f"ws://127.0.0.1:{server.port}"


def client(server):
    # unbounded queue: a test that pauses reading must not stall the close
    # handshake behind its own state backlog
    return connect(uri(server), max_queue=None)


async def next_state(ws, arm, timeout=2.0):
    """Read frames until the next StateUpdate for one arm."""
    deadline = time.perf_counter() + timeout
    while True:
        remaining = deadline - time.perf_counter()
        msg = decode_message(await asyncio.wait_for(ws.recv(), max(remaining, 0.01)))
        if isinstance(msg, StateUpdate) and msg.arm == arm:
            return msg


async def collect_states(ws, arm, seconds):
    """Gather this arm's StateUpdates for a wall-clock window."""
    out = []
    t_end = time.perf_counter() + seconds
    while time.perf_counter() < t_end:
        try:
            out.append(await next_state(ws, arm, timeout=t_end - time.perf_counter()))
        except (asyncio.TimeoutError, TimeoutError):
            break
    return out


_FENCE = itertools.count(1_000_000)


async def fresh_state(ws, arm):
    """Current state, not buffered history: fence with a ping first.

    Frames are ordered per connection, so everything queued before the
    Pong reply predates it; the next state after the Pong is live.
    """
    nonce = next(_FENCE)
    await ws.send(encode_message(Ping(nonce=nonce)))
    while True:
        msg = decode_message(await asyncio.wait_for(ws.recv(), 2.0))
        if isinstance(msg, Pong) and msg.nonce == nonce:
            return await next_state(ws, arm)


def command(arm, q, seq):
    return encode_message(
        JointCommand(arm=arm, q=tuple(float(v) for v in q), seq=seq, t_client_us=0)
    )


# -- schema ------------------------------------------------------------


def test_message_round_trip():
    msgs = [
        JointCommand(arm=GRIPPER, q=tuple(np.linspace(-1, 1, 7)), seq=3, t_client_us=17),
        StateUpdate(arm=CUTTER, q=(0.0,) * 7, attached=True, seq=9, t_server_us=123),
        Takeover(arm=GRIPPER),
        Release(arm=CUTTER),
        EStop(),
        Ping(nonce=7),
        Pong(nonce=7, t_server_us=55),
    ]
    for msg in msgs:
        assert decode_message(encode_message(msg)) == msg


def test_encode_is_single_line_json():
    text = encode_message(Takeover(arm=GRIPPER))
    assert "\n" not in text
    assert json.loads(text) == {"type": "takeover", "arm": GRIPPER}


def test_decode_rejects_malformed():
    ok = {"type": "joint_command", "arm": GRIPPER, "q": [0.0] * 7, "seq": 1, "t_client_us": 0}
    bad_frames = [
        "not json",
        json.dumps([1, 2, 3]),
        json.dumps({"arm": GRIPPER}),
        json.dumps({"type": "warp_drive"}),
        json.dumps({**ok, "arm": "left"}),
        json.dumps({**ok, "q": [0.0] * 6}),
        json.dumps({**ok, "q": [0.0] * 6 + [float("nan")]}),
        json.dumps({**ok, "q": [0.0] * 6 + ["x"]}),
        json.dumps({**ok, "seq": -1}),
        json.dumps({**ok, "seq": True}),
        json.dumps({**ok, "seq": 1.5}),
        json.dumps({k: v for k, v in ok.items() if k != "t_client_us"}),
        json.dumps({"type": "ping"}),
        json.dumps({"type": "state", "arm": GRIPPER, "q": [0.0] * 7,
                    "attached": 1, "seq": 0, "t_server_us": 0}),
    ]
    for frame in bad_frames:
        with pytest.raises(ValueError):
            decode_message(frame)
    decode_message(json.dumps(ok))


def test_seq_gate_strictly_increasing():
    gate = SeqGate()
    assert gate.accept(("a", GRIPPER), 1)
    assert not gate.accept(("a", GRIPPER), 1)
    assert not gate.accept(("a", GRIPPER), 0)
    assert gate.accept(("a", GRIPPER), 2)
    assert gate.accept(("a", CUTTER), 1)
    assert gate.accept(("b", GRIPPER), 1)


# -- arbitration and config ---------------------------------------------


def test_arbitrate_table():
    cases = {
        (False, False, False): ControlSource.AUTONOMY,
        (True, False, False): ControlSource.TELEOP,
        (True, True, False): ControlSource.TELEOP,
        (False, True, False): ControlSource.FROZEN,
        (False, False, True): ControlSource.FROZEN,
        (True, False, True): ControlSource.FROZEN,
        (True, True, True): ControlSource.FROZEN,
        (False, True, True): ControlSource.FROZEN,
    }
    for (taken, paused, estop), want in cases.items():
        assert arbitrate(taken, paused, estop) is want


def test_control_loop_config_validation():
    cfg = ControlLoopConfig()
    assert cfg.rate_hz == 100.0 and cfg.command_hz == 40.0
    for kw in ({"rate_hz": 0.0}, {"command_hz": -1.0}, {"max_step": 0.0}, {"stale_ms": 0.0}):
        with pytest.raises(ConfigError):
            ControlLoopConfig(**kw)


# -- server behavior ------------------------------------------------------


def test_port_in_use():
    async def main():
        a = await TeleopServer().start(0)
        try:
            with pytest.raises(PortInUse):
                await TeleopServer().start(a.port)
        finally:
            await a.stop()

    asyncio.run(main())


def test_tick_rate_short_window():
    async def main():
        server = await TeleopServer().start(0)
        try:
            async with client(server) as ws:
                first = await next_state(ws, GRIPPER)
                t0 = time.perf_counter()
                last = first
                while time.perf_counter() - t0 < 2.0:
                    last = await next_state(ws, GRIPPER)
                rate = (last.seq - first.seq) / (time.perf_counter() - t0)
                assert 90.0 <= rate <= 110.0
        finally:
            await server.stop()

    asyncio.run(main())


def test_state_seq_strictly_increasing_per_arm():
    async def main():
        server = await TeleopServer().start(0)
        try:
            async with client(server) as ws:
                seen = {GRIPPER: [], CUTTER: []}
                for _ in range(120):
                    msg = decode_message(await asyncio.wait_for(ws.recv(), 1.0))
                    if isinstance(msg, StateUpdate):
                        seen[msg.arm].append(msg.seq)
                for arm in (GRIPPER, CUTTER):
                    seqs = seen[arm]
                    assert len(seqs) >= 40
                    assert all(b > a for a, b in zip(seqs, seqs[1:]))
        finally:
            await server.stop()

    asyncio.run(main())


def test_ping_answered_immediately():
    async def main():
        server = await TeleopServer().start(0)
        try:
            async with client(server) as ws:
                rtts = []
                for nonce in range(200):
                    t0 = time.perf_counter()
                    await ws.send(encode_message(Ping(nonce=nonce)))
                    while True:
                        msg = decode_message(await asyncio.wait_for(ws.recv(), 1.0))
                        if isinstance(msg, Pong):
                            assert msg.nonce == nonce
                            rtts.append(time.perf_counter() - t0)
                            break
                rtts.sort()
                p99 = rtts[int(np.ceil(0.99 * len(rtts))) - 1]
                assert p99 < 0.030
        finally:
            await server.stop()

    asyncio.run(main())


def test_takeover_command_converges_in_fifty_ticks():
    async def main():
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                home = server.scene.home[GRIPPER]
                target = home.copy()
                target[3] += 1.0
                await ws.send(encode_message(Takeover(arm=GRIPPER)))
                track = [await next_state(ws, GRIPPER)]  # baseline before the command
                await ws.send(command(GRIPPER, target, seq=1))
                t_end = time.perf_counter() + 3.0
                while time.perf_counter() < t_end:
                    track.append(await next_state(ws, GRIPPER))
                    if abs(track[-1].q[3] - target[3]) < 1e-9:
                        break
                deltas = [b.q[3] - a.q[3] for a, b in zip(track, track[1:])]
                moving = [d for d in deltas if abs(d) > 1e-9]
                # 1.0 rad at 0.02 rad per tick: exactly 50 moving ticks
                assert len(moving) == 50
                assert all(d > 0 for d in moving)
                assert max(moving) <= cfg.max_step * (1 + 1e-12)
                assert abs(track[-1].q[3] - target[3]) < 1e-9
        finally:
            await server.stop()

    asyncio.run(main())


def test_commands_ignored_without_takeover():
    async def main():
        server = await TeleopServer().start(0)
        try:
            async with client(server) as ws:
                home = server.scene.home[GRIPPER]
                target = home.copy()
                target[3] += 0.5
                await ws.send(command(GRIPPER, target, seq=1))
                await asyncio.sleep(0.3)
                state = await fresh_state(ws, GRIPPER)
                np.testing.assert_allclose(state.q, home, atol=1e-12)
        finally:
            await server.stop()

    asyncio.run(main())


def test_second_client_cannot_steal_takeover():
    async def main():
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as wa, client(server) as wb:
                home = server.scene.home[GRIPPER]
                await wa.send(encode_message(Takeover(arm=GRIPPER)))
                await asyncio.sleep(0.05)
                await wb.send(encode_message(Takeover(arm=GRIPPER)))
                intruder = home.copy()
                intruder[3] -= 0.5
                await wb.send(command(GRIPPER, intruder, seq=1))
                await asyncio.sleep(0.3)
                state = await fresh_state(wa, GRIPPER)
                np.testing.assert_allclose(state.q, home, atol=1e-12)
                wanted = home.copy()
                wanted[3] += 0.2
                await wa.send(command(GRIPPER, wanted, seq=1))
                await asyncio.sleep(0.4)
                state = await fresh_state(wa, GRIPPER)
                assert abs(state.q[3] - wanted[3]) < 1e-9
        finally:
            await server.stop()

    asyncio.run(main())


def test_stale_command_holds_arm():
    async def main():
        cfg = ControlLoopConfig(stale_ms=100.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                home = server.scene.home[GRIPPER]
                target = home.copy()
                target[3] += 1.0
                await ws.send(encode_message(Takeover(arm=GRIPPER)))
                await ws.send(command(GRIPPER, target, seq=1))
                await asyncio.sleep(0.6)
                a = await fresh_state(ws, GRIPPER)
                # moved for roughly stale_ms worth of ticks, then held short
                assert 0.02 <= a.q[3] - home[3] <= 0.5
                await asyncio.sleep(0.3)
                b = await fresh_state(ws, GRIPPER)
                assert b.q == a.q
        finally:
            await server.stop()

    asyncio.run(main())


def test_estop_freezes_both_arms():
    async def main():
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                targets = {}
                for seq, arm in enumerate((GRIPPER, CUTTER), start=1):
                    tgt = server.scene.home[arm].copy()
                    tgt[3] += 1.0
                    targets[arm] = tgt
                    await ws.send(encode_message(Takeover(arm=arm)))
                    await ws.send(command(arm, tgt, seq=seq))
                await asyncio.sleep(0.2)
                await ws.send(encode_message(EStop()))
                await asyncio.sleep(0.1)
                frozen = {arm: (await fresh_state(ws, arm)).q for arm in (GRIPPER, CUTTER)}
                for seq, arm in enumerate((GRIPPER, CUTTER), start=10):
                    await ws.send(command(arm, targets[arm], seq=seq))
                await asyncio.sleep(0.4)
                for arm in (GRIPPER, CUTTER):
                    assert (await fresh_state(ws, arm)).q == frozen[arm]
                    assert abs(frozen[arm][3] - targets[arm][3]) > 0.5
        finally:
            await server.stop()

    asyncio.run(main())


def test_release_resumes_autonomy_from_live_config():
    async def main():
        scene = default_scene()
        auto_target = scene.home[GRIPPER].copy()
        auto_target[1] += 0.8

        def autonomy(arm, q, tick):
            return auto_target if arm == GRIPPER else None

        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(scene=scene, cfg=cfg, autonomy=autonomy).start(0)
        try:
            async with client(server) as ws:
                a = await next_state(ws, GRIPPER)
                await asyncio.sleep(0.1)
                b = await next_state(ws, GRIPPER)
                assert b.q[1] > a.q[1]  # autonomy is driving
                await ws.send(encode_message(Takeover(arm=GRIPPER)))
                hold = scene.home[GRIPPER].copy()
                await ws.send(command(GRIPPER, hold, seq=1))
                await asyncio.sleep(0.3)
                c = await next_state(ws, GRIPPER)
                assert c.q[1] < b.q[1] + 0.3  # operator pushed back toward home
                await ws.send(encode_message(Release(arm=GRIPPER)))
                track = [await next_state(ws, GRIPPER)]
                t_end = time.perf_counter() + 3.0
                while time.perf_counter() < t_end:
                    track.append(await next_state(ws, GRIPPER))
                    if abs(track[-1].q[1] - auto_target[1]) < 1e-9:
                        break
                assert abs(track[-1].q[1] - auto_target[1]) < 1e-9
                deltas = [np.max(np.abs(np.subtract(b.q, a.q)))
                          for a, b in zip(track, track[1:])
                          if b.seq == a.seq + 1]
                assert max(deltas) <= cfg.max_step * (1 + 1e-12)  # no jump on resume
        finally:
            await server.stop()

    asyncio.run(main())


def test_disconnect_freezes_arm_until_new_takeover():
    async def main():
        scene = default_scene()
        auto_target = scene.home[GRIPPER].copy()
        auto_target[1] += 0.8

        def autonomy(arm, q, tick):
            return auto_target if arm == GRIPPER else None

        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(scene=scene, cfg=cfg, autonomy=autonomy).start(0)
        try:
            wa = await client(server)
            await wa.send(encode_message(Takeover(arm=GRIPPER)))
            tgt = scene.home[GRIPPER].copy()
            tgt[3] += 1.0
            await wa.send(command(GRIPPER, tgt, seq=1))
            await asyncio.sleep(0.2)
            await wa.close()  # operator vanishes halfway to the target
            await asyncio.sleep(0.1)
            async with client(server) as wb:
                a = await fresh_state(wb, GRIPPER)
                assert 0.1 < a.q[3] - scene.home[GRIPPER][3] < 0.9  # froze mid-motion
                await asyncio.sleep(0.4)
                b = await fresh_state(wb, GRIPPER)
                assert b.q == a.q  # frozen: lost operator does not hand back autonomy
                assert b.q[1] == a.q[1]  # the autonomy stream stays paused
                assert server.arms[GRIPPER].owner is None
                await wb.send(encode_message(Takeover(arm=GRIPPER)))
                await wb.send(command(GRIPPER, tgt, seq=1))
                await asyncio.sleep(0.3)
                c = await fresh_state(wb, GRIPPER)
                assert c.q[3] > b.q[3]  # new operator drives again
        finally:
            await server.stop()

    asyncio.run(main())


def test_step_clamp_fuzz():
    async def main():
        rng = np.random.default_rng(11)
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                chain = server.scene.arms[GRIPPER]
                await ws.send(encode_message(Takeover(arm=GRIPPER)))

                async def spam():
                    for seq in range(1, 120):
                        q = rng.uniform(chain.lower - 1.0, chain.upper + 1.0)
                        await ws.send(command(GRIPPER, q, seq=seq))
                        await asyncio.sleep(float(rng.uniform(0.0, 0.04)))

                spam_task = asyncio.get_running_loop().create_task(spam())
                states = await collect_states(ws, GRIPPER, 2.5)
                await spam_task
                assert len(states) >= 150
                moved = 0.0
                for a, b in zip(states, states[1:]):
                    if b.seq != a.seq + 1:
                        continue
                    step = np.max(np.abs(np.subtract(b.q, a.q)))
                    assert step <= cfg.max_step * (1 + 1e-12)
                    moved += step
                assert moved > 0.5  # the bursts actually drove the arm around
                hi = np.max([s.q for s in states], axis=0)
                lo = np.min([s.q for s in states], axis=0)
                assert np.all(hi <= chain.upper + 1e-12)
                assert np.all(lo >= chain.lower - 1e-12)
        finally:
            await server.stop()

    asyncio.run(main())


def test_targets_clamped_to_joint_limits():
    async def main():
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                chain = server.scene.arms[GRIPPER]
                wild = server.scene.home[GRIPPER].copy()
                wild[3] = 10.0
                await ws.send(encode_message(Takeover(arm=GRIPPER)))
                await ws.send(command(GRIPPER, wild, seq=1))
                settled = None
                t_end = time.perf_counter() + 3.0
                while time.perf_counter() < t_end:
                    settled = await next_state(ws, GRIPPER)
                    assert settled.q[3] <= chain.upper[3] + 1e-12
                    if abs(settled.q[3] - chain.upper[3]) < 1e-9:
                        break
                assert abs(settled.q[3] - chain.upper[3]) < 1e-9
        finally:
            await server.stop()

    asyncio.run(main())


def test_server_survives_malformed_frames():
    async def main():
        server = await TeleopServer().start(0)
        try:
            async with client(server) as ws:
                for frame in ("garbage", "{}", '{"type":"state"}', '[]',
                              '{"type":"joint_command","arm":"gripper","q":[1,2,3],"seq":1,"t_client_us":0}'):
                    await ws.send(frame)
                await ws.send(encode_message(Ping(nonce=5)))
                while True:
                    msg = decode_message(await asyncio.wait_for(ws.recv(), 1.0))
                    if isinstance(msg, Pong):
                        assert msg.nonce == 5
                        break
                assert await next_state(ws, CUTTER)  # loop still broadcasting
        finally:
            await server.stop()

    asyncio.run(main())


def test_sequence_regressions_are_dropped():
    async def main():
        cfg = ControlLoopConfig(stale_ms=60_000.0)
        server = await TeleopServer(cfg=cfg).start(0)
        try:
            async with client(server) as ws:
                home = server.scene.home[GRIPPER]
                fwd = home.copy()
                fwd[3] += 0.2
                back = home.copy()
                back[3] -= 0.2
                await ws.send(encode_message(Takeover(arm=GRIPPER)))
                await ws.send(command(GRIPPER, fwd, seq=5))
                await asyncio.sleep(0.05)
                await ws.send(command(GRIPPER, back, seq=5))
                await ws.send(command(GRIPPER, back, seq=4))
                await asyncio.sleep(0.4)
                state = await fresh_state(ws, GRIPPER)
                assert abs(state.q[3] - fwd[3]) < 1e-9  # replays never took effect
                await ws.send(command(GRIPPER, back, seq=6))
                await asyncio.sleep(0.5)
                state = await fresh_state(ws, GRIPPER)
                assert abs(state.q[3] - back[3]) < 1e-9
        finally:
            await server.stop()

    asyncio.run(main())


# -- plain HTTP -----------------------------------------------------------


def http_get(port, path):
    with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}", timeout=5) as r:
        return r.status, r.headers["Content-Type"], r.read()


def test_chain_endpoint_round_trips():
    async def main():
        server = await TeleopServer().start(0)
        try:
            status, ctype, body = await asyncio.to_thread(http_get, server.port, "/chain.json")
            assert status == 200 and ctype == "application/json"
            data = json.loads(body)
            assert sorted(data["arms"]) == [CUTTER, GRIPPER]
            for arm in (GRIPPER, CUTTER):
                served = chain_from_dict(data["arms"][arm])
                chain = server.scene.arms[arm]
                assert served.dof == chain.dof
                np.testing.assert_allclose(served.lower, chain.lower, atol=1e-12)
                np.testing.assert_allclose(served.base.translation, chain.base.translation, atol=1e-12)
                home = np.asarray(data["home"][arm])
                np.testing.assert_allclose(home, server.scene.home[arm], atol=1e-12)
                a = served.forward_kinematics(home)
                b = chain.forward_kinematics(home)
                np.testing.assert_allclose(a.translation, b.translation, atol=1e-9)
                np.testing.assert_allclose(a.rotation, b.rotation, atol=1e-9)
        finally:
            await server.stop()

    asyncio.run(main())


def test_static_files_and_missing_paths(tmp_path):
    static = tmp_path / "static"
    static.mkdir()
    (static / "index.html").write_text("<h1>console</h1>")
    (static / "app.js").write_text("export {};")
    (tmp_path / "secret.txt").write_text("keep out")

    async def main():
        server = await TeleopServer(static_dir=static).start(0)
        try:
            status, ctype, body = await asyncio.to_thread(http_get, server.port, "/")
            assert status == 200 and ctype.startswith("text/html") and b"console" in body
            status, ctype, _ = await asyncio.to_thread(http_get, server.port, "/app.js")
            assert status == 200 and ctype.startswith("text/javascript")
            with pytest.raises(urllib.request.HTTPError):
                await asyncio.to_thread(http_get, server.port, "/missing.css")
            # path traversal never escapes the static root
            reader, writer = await asyncio.open_connection("127.0.0.1", server.port)
            writer.write(b"GET /../secret.txt HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
            await writer.drain()
            reply = await asyncio.wait_for(reader.read(200), 5.0)
            writer.close()
            assert b"404" in reply.split(b"\r\n", 1)[0]
            assert b"keep out" not in reply
        finally:
            await server.stop()

    asyncio.run(main())


def test_placeholder_page_without_static_dir():
    async def main():
        server = await TeleopServer().start(0)
        try:
            status, ctype, body = await asyncio.to_thread(http_get, server.port, "/")
            assert status == 200 and ctype.startswith("text/html")
            assert b"teleop" in body
        finally:
            await server.stop()

    asyncio.run(main())
