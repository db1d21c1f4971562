"""Teleoperation service: a fixed-rate control loop behind a message socket.

One protocol serves human UIs and scripted drivers identically: JSON
messages, one per line. Two transports share the listening port; raw TCP
speaks newline-delimited JSON directly, and browsers connect with a
WebSocket handshake (sniffed by the leading "GET "), after which each text
frame carries one JSON message.

Inbound:  engage | leader_pose {arm, position, quaternion}
          | start_recording | stop_recording
Outbound: hello (once), state (every tick), recording acks, error.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import struct
import threading
import time
from pathlib import Path

from .config import RunConfig
from .episodes import pose_to_json
from .errors import ConfigurationError
from .geometry import Pose, Quat
from .loop import ControlLoop

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
PROTOCOL_VERSION = 1


class LineTransport:
    """Newline-delimited JSON over a plain TCP socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = b""
        self._send_lock = threading.Lock()

    def send_text(self, text: str):
        with self._send_lock:
            self.sock.sendall(text.encode() + b"\n")

    def recv_messages(self):
        data = self.sock.recv(4096)
        if not data:
            return None
        self._buf += data
        out = []
        while b"\n" in self._buf:
            line, self._buf = self._buf.split(b"\n", 1)
            if line.strip():
                out.append(line.decode())
        return out

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class WebSocketTransport:
    """RFC 6455 server-side framing; one JSON message per text frame."""

    def __init__(self, sock: socket.socket, first_chunk: bytes):
        self.sock = sock
        self._send_lock = threading.Lock()
        self._buf = b""
        self._handshake(first_chunk)

    def _handshake(self, first_chunk: bytes):
        data = first_chunk
        while b"\r\n\r\n" not in data:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("client closed during websocket handshake")
            data += chunk
        head, rest = data.split(b"\r\n\r\n", 1)
        self._buf = rest
        key = None
        for line in head.decode("latin-1").split("\r\n")[1:]:
            if ":" in line:
                name, value = line.split(":", 1)
                if name.strip().lower() == "sec-websocket-key":
                    key = value.strip()
        if key is None:
            raise ConnectionError("missing Sec-WebSocket-Key")
        accept = base64.b64encode(
            hashlib.sha1((key + WS_GUID).encode()).digest()
        ).decode()
        self.sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n"
        )

    def send_text(self, text: str):
        payload = text.encode()
        n = len(payload)
        if n < 126:
            header = struct.pack("!BB", 0x81, n)
        elif n < 1 << 16:
            header = struct.pack("!BBH", 0x81, 126, n)
        else:
            header = struct.pack("!BBQ", 0x81, 127, n)
        with self._send_lock:
            self.sock.sendall(header + payload)

    def _read_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self.sock.recv(4096)
            if not chunk:
                raise ConnectionError("client closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def recv_messages(self):
        try:
            b0, b1 = self._read_exact(2)
        except ConnectionError:
            return None
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            (length,) = struct.unpack("!H", self._read_exact(2))
        elif length == 127:
            (length,) = struct.unpack("!Q", self._read_exact(8))
        mask = self._read_exact(4) if masked else b"\x00" * 4
        payload = bytearray(self._read_exact(length))
        if masked:
            for i in range(length):
                payload[i] ^= mask[i % 4]
        if opcode == 0x8:  # close
            return None
        if opcode == 0x9:  # ping -> pong
            with self._send_lock:
                self.sock.sendall(struct.pack("!BB", 0x8A, len(payload)) + bytes(payload))
            return []
        if opcode in (0x1, 0x2):
            text = payload.decode().strip()
            return [line for line in text.split("\n") if line.strip()]
        return []

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def open_transport(sock: socket.socket):
    """Sniff the first bytes to pick raw-line or websocket framing."""
    first = sock.recv(4096)
    if not first:
        raise ConnectionError("client closed before speaking")
    if first.startswith(b"GET "):
        return WebSocketTransport(sock, first)
    t = LineTransport(sock)
    t._buf = first
    return t


class TeleopService:
    """Wall-clock paced control loop with connected message clients."""

    def __init__(self, config: RunConfig, out_dir, record: bool = False,
                 seed: int | None = None):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.loop = ControlLoop(config, seed=seed)
        self.dt = config.dt
        self.record_on_start = record
        self._clients: list = []
        self._clients_lock = threading.Lock()
        self._control_msgs: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self.deadline_misses = 0
        self.ticks_run = 0
        self._listener: socket.socket | None = None
        self.port: int | None = None
        self._episode_counter = 0

    # -- networking --------------------------------------------------------

    def _hello(self) -> dict:
        scene = self.config.scene
        return {
            "type": "hello",
            "version": PROTOCOL_VERSION,
            "config_hash": self.config.config_hash(),
            "control_rate_hz": self.config.control_rate_hz,
            "collision_threshold": self.loop.gate.threshold,
            "phantom": {
                "surface_height": scene.surface_height,
                "lesion": [float(v) for v in scene.lesion_point],
                "target_plane": pose_to_json(scene.target_plane),
            },
            "workspace": self.config.values["workspace"],
        }

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            try:
                sock.settimeout(10.0)
                transport = open_transport(sock)
                sock.settimeout(None)
                transport.send_text(json.dumps(self._hello()))
            except (ConnectionError, OSError):
                continue
            with self._clients_lock:
                self._clients.append(transport)
            threading.Thread(target=self._reader_loop, args=(transport,),
                             daemon=True).start()

    def _reader_loop(self, transport):
        """Ingestion thread: leader poses go straight to the smoothing
        queues; stateful commands are applied at the next tick boundary."""
        while not self._stop.is_set():
            try:
                msgs = transport.recv_messages()
            except (ConnectionError, OSError):
                msgs = None
            if msgs is None:
                self._drop_client(transport)
                return
            for raw in msgs:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    self._send(transport, {"type": "error", "message": "bad json"})
                    continue
                self._handle_message(transport, msg)

    def _handle_message(self, transport, msg: dict):
        kind = msg.get("type")
        if kind == "leader_pose":
            try:
                arm = msg["arm"]
                if arm not in ("probe", "needle"):
                    raise KeyError(arm)
                pose = Pose(msg["position"], Quat.from_array(msg["quaternion"]))
            except (KeyError, TypeError, ValueError) as e:
                self._send(transport, {"type": "error",
                                       "message": f"bad leader_pose: {e}"})
                return
            self.loop.submit_leader_pose(arm, pose)
        elif kind in ("engage", "start_recording", "stop_recording"):
            self._control_msgs.put((transport, kind))
        else:
            self._send(transport, {"type": "error", "message": f"unknown type {kind!r}"})

    def _send(self, transport, payload: dict):
        try:
            transport.send_text(json.dumps(payload))
        except (OSError, ConnectionError):
            self._drop_client(transport)

    def _drop_client(self, transport):
        with self._clients_lock:
            if transport in self._clients:
                self._clients.remove(transport)
        transport.close()

    def _broadcast(self, payload: dict):
        text = json.dumps(payload)
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            try:
                c.send_text(text)
            except (OSError, ConnectionError):
                self._drop_client(c)

    # -- control thread ----------------------------------------------------

    def _apply_control_messages(self):
        while True:
            try:
                transport, kind = self._control_msgs.get_nowait()
            except queue.Empty:
                return
            if kind == "engage":
                self.loop.engage()
                self._send(transport, {"type": "engaged"})
            elif kind == "start_recording":
                path = self.out_dir / f"episode_{self._episode_counter:03d}.jsonl"
                self._episode_counter += 1
                self.loop.start_recording(path, config_payload=self.config.resolved())
                self._send(transport, {"type": "recording", "active": True,
                                       "path": str(path)})
            elif kind == "stop_recording":
                self.loop.stop_recording()
                self._send(transport, {"type": "recording", "active": False})

    def _state_message(self, result) -> dict:
        return {
            "type": "state",
            "tick": result.tick,
            "t": round(result.time, 6),
            "phase": result.phase.label,
            "plane_quality": result.signals.observation.plane_quality,
            "d_min": result.d_min,
            "verdict": result.verdict,
            "recording": result.recording,
            "record_count": result.record_count,
            "arms": {
                "probe": {"setpoint": pose_to_json(result.setpoint_probe),
                          "pose": pose_to_json(result.follower_probe)},
                "needle": {"setpoint": pose_to_json(result.setpoint_needle),
                           "pose": pose_to_json(result.follower_needle)},
            },
            "tools": self.loop.unified_tool_segments(),
        }

    def run(self, duration: float | None = None) -> dict:
        host = self.config.values["service"]["host"]
        port = int(self.config.values["service"]["port"])
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._listener.bind((host, port))
        except OSError as e:
            raise ConfigurationError(f"cannot bind service port {host}:{port}: {e}") from e
        self._listener.listen(8)
        self.port = self._listener.getsockname()[1]
        threading.Thread(target=self._accept_loop, daemon=True).start()

        if self.record_on_start:
            path = self.out_dir / f"episode_{self._episode_counter:03d}.jsonl"
            self._episode_counter += 1
            self.loop.start_recording(path, config_payload=self.config.resolved())

        max_ticks = None if duration is None else int(round(duration / self.dt))
        next_deadline = time.perf_counter() + self.dt
        try:
            while not self._stop.is_set():
                if max_ticks is not None and self.ticks_run >= max_ticks:
                    break
                self._apply_control_messages()
                result = self.loop.tick()
                self._broadcast(self._state_message(result))
                self.ticks_run += 1
                now = time.perf_counter()
                if now > next_deadline:
                    self.deadline_misses += 1
                    next_deadline = now + self.dt
                else:
                    time.sleep(next_deadline - now)
                    next_deadline += self.dt
        finally:
            self.shutdown()
        stats = {
            "ticks": self.ticks_run,
            "deadline_misses": self.deadline_misses,
            "control_rate_hz": self.config.control_rate_hz,
            "duration_s": self.ticks_run * self.dt,
        }
        (self.out_dir / "serve_stats.json").write_text(json.dumps(stats, indent=2))
        return stats

    def shutdown(self):
        self._stop.set()
        self.loop.stop_recording()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._clients_lock:
            clients = list(self._clients)
            self._clients.clear()
        for c in clients:
            c.close()
