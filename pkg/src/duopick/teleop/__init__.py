"""Browser teleoperation: wire schema and fixed-rate WebSocket control loop."""

from .messages import (
    ARMS,
    N_JOINTS,
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
from .server import (
    ControlLoopConfig,
    ControlSource,
    TeleopServer,
    arbitrate,
    run_server,
    serve_teleop,
)

__all__ = [
    "ARMS",
    "N_JOINTS",
    "ControlLoopConfig",
    "ControlSource",
    "EStop",
    "JointCommand",
    "Ping",
    "Pong",
    "Release",
    "SeqGate",
    "StateUpdate",
    "Takeover",
    "TeleopServer",
    "arbitrate",
    "decode_message",
    "encode_message",
    "run_server",
    "serve_teleop",
]
