"""Teleop wire schema: tagged-union JSON messages shared by server and console.

Every frame on the wire is a single JSON object with a ``type`` tag. Commands
flow client to server, state flows server to client, and ping/pong measures
round-trip latency. Decoding is strict: unknown tags, missing fields, wrong
arity, bad arm names, and non-finite angles all raise ValueError so a
malformed frame can never reach the control loop.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

N_JOINTS = 7
ARMS = ("gripper", "cutter")


@dataclass(frozen=True)
class JointCommand:
    """Operator request: drive one arm toward seven target joint angles."""

    arm: str
    q: tuple
    seq: int
    t_client_us: int


@dataclass(frozen=True)
class StateUpdate:
    """Server broadcast: one arm's joint angles and attachment flag."""

    arm: str
    q: tuple
    attached: bool
    seq: int
    t_server_us: int


@dataclass(frozen=True)
class Takeover:
    """Claim manual control of one arm."""

    arm: str


@dataclass(frozen=True)
class Release:
    """Return one arm to autonomous control."""

    arm: str


@dataclass(frozen=True)
class EStop:
    """Freeze both arms and the executive."""


@dataclass(frozen=True)
class Ping:
    """Latency probe; the server echoes the nonce in a Pong."""

    nonce: int


@dataclass(frozen=True)
class Pong:
    """Reply to a Ping, stamped with the server's monotonic clock."""

    nonce: int
    t_server_us: int


def _require(obj: dict, key: str):
    if key not in obj:
        raise ValueError(f"message missing field {key!r}")
    return obj[key]


def _check_arm(arm) -> str:
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")
    return arm


def _check_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer")
    if value < 0:
        raise ValueError(f"{name} must be non-negative")
    return value


def _check_angles(q) -> tuple:
    if not isinstance(q, (list, tuple)) or len(q) != N_JOINTS:
        raise ValueError(f"q must hold exactly {N_JOINTS} angles")
    out = []
    for v in q:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError("joint angles must be numbers")
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("joint angles must be finite")
        out.append(v)
    return tuple(out)


def decode_message(text: str):
    """Parse one wire frame into a typed message, or raise ValueError.

    Accepts every tag in the protocol so both endpoints share one decoder;
    each variant is validated field by field before construction.
    """
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ValueError(f"frame is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError("frame must be a JSON object")
    tag = _require(obj, "type")
    if tag == "joint_command":
        return JointCommand(
            arm=_check_arm(_require(obj, "arm")),
            q=_check_angles(_require(obj, "q")),
            seq=_check_int(_require(obj, "seq"), "seq"),
            t_client_us=_check_int(_require(obj, "t_client_us"), "t_client_us"),
        )
    if tag == "state":
        attached = _require(obj, "attached")
        if not isinstance(attached, bool):
            raise ValueError("attached must be a boolean")
        return StateUpdate(
            arm=_check_arm(_require(obj, "arm")),
            q=_check_angles(_require(obj, "q")),
            attached=attached,
            seq=_check_int(_require(obj, "seq"), "seq"),
            t_server_us=_check_int(_require(obj, "t_server_us"), "t_server_us"),
        )
    if tag == "takeover":
        return Takeover(arm=_check_arm(_require(obj, "arm")))
    if tag == "release":
        return Release(arm=_check_arm(_require(obj, "arm")))
    if tag == "estop":
        return EStop()
    if tag == "ping":
        return Ping(nonce=_check_int(_require(obj, "nonce"), "nonce"))
    if tag == "pong":
        return Pong(
            nonce=_check_int(_require(obj, "nonce"), "nonce"),
            t_server_us=_check_int(_require(obj, "t_server_us"), "t_server_us"),
        )
    raise ValueError(f"unknown message type {tag!r}")


def encode_message(msg) -> str:
    """Serialize a typed message to its one-line JSON wire form."""
    if isinstance(msg, JointCommand):
        obj = {
            "type": "joint_command",
            "arm": msg.arm,
            "q": list(msg.q),
            "seq": msg.seq,
            "t_client_us": msg.t_client_us,
        }
    elif isinstance(msg, StateUpdate):
        obj = {
            "type": "state",
            "arm": msg.arm,
            "q": list(msg.q),
            "attached": msg.attached,
            "seq": msg.seq,
            "t_server_us": msg.t_server_us,
        }
    elif isinstance(msg, Takeover):
        obj = {"type": "takeover", "arm": msg.arm}
    elif isinstance(msg, Release):
        obj = {"type": "release", "arm": msg.arm}
    elif isinstance(msg, EStop):
        obj = {"type": "estop"}
    elif isinstance(msg, Ping):
        obj = {"type": "ping", "nonce": msg.nonce}
    elif isinstance(msg, Pong):
        obj = {"type": "pong", "nonce": msg.nonce, "t_server_us": msg.t_server_us}
    else:
        raise ValueError(f"cannot encode {type(msg).__name__}")
    return json.dumps(obj, separators=(",", ":"))


class SeqGate:
    """Per-sender strictly-increasing sequence filter.

    accept() returns True exactly when seq is greater than every sequence
    previously accepted under the same key, so replayed or reordered frames
    are dropped without state changes.
    """

    def __init__(self):
        self._last = {}

    def accept(self, key, seq: int) -> bool:
        last = self._last.get(key)
        if last is not None and seq <= last:
            return False
        self._last[key] = seq
        return True
