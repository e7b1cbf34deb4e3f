"""Line-delimited JSON bridge to an external policy process (protocol v1).

The policy child speaks first with a hello message; afterwards the harness
sends observation batches and expects an action sequence per request.  Unknown
fields are ignored everywhere; unknown kinds abort the episode.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading

PROTOCOL_VERSION = 1


class BridgeTimeout(Exception):
    """Policy process failed to answer within the deadline (after one retry)."""


class BridgeProtocolError(Exception):
    """Policy process sent something outside protocol v1."""


class BridgeClient:
    """Owns one policy child process and the request/reply cycle with it."""

    def __init__(self, command: str, timeout: float = 10.0):
        self.command = command
        self.timeout = timeout
        self.proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self.peer_name = self._handshake()

    def _pump(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _read_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise BridgeTimeout(f"no reply within {self.timeout}s")
        if line is None:
            raise BridgeProtocolError("policy process closed its output")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise BridgeProtocolError(f"undecodable message: {e}")
        if not isinstance(msg, dict) or "kind" not in msg:
            raise BridgeProtocolError("message without a kind field")
        return msg

    def _send(self, msg: dict) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(json.dumps(msg, separators=(",", ":")) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BridgeProtocolError(f"policy process pipe broken: {e}")

    def _handshake(self) -> str:
        try:
            msg = self._read_message()
        except BridgeTimeout:
            self.close()
            raise
        if msg["kind"] == "error":
            raise BridgeProtocolError(f"policy error: {msg.get('message')}")
        if msg["kind"] != "hello":
            raise BridgeProtocolError(f"expected hello, got {msg['kind']!r}")
        if msg.get("version") != PROTOCOL_VERSION:
            raise BridgeProtocolError(f"unsupported bridge version {msg.get('version')!r}")
        return str(msg.get("name", "policy"))

    def request_actions(self, t: int, observations: list[dict], t_a: int) -> list[tuple[float, float]]:
        """Send one obs message and return the validated T_a action pairs."""
        obs_msg = {"kind": "obs", "t": t, "observations": observations}
        self._send(obs_msg)
        for attempt in range(2):
            try:
                msg = self._read_message()
            except BridgeTimeout:
                if attempt == 0:
                    self._send(obs_msg)  # one retry
                    continue
                raise
            return self._parse_action(msg, t_a)
        raise BridgeTimeout(f"no reply within {self.timeout}s")

    def _parse_action(self, msg: dict, t_a: int) -> list[tuple[float, float]]:
        if msg["kind"] == "error":
            raise BridgeProtocolError(f"policy error: {msg.get('message')}")
        if msg["kind"] != "action":
            raise BridgeProtocolError(f"expected action, got {msg['kind']!r}")
        actions = msg.get("actions")
        if not isinstance(actions, list) or len(actions) != t_a:
            raise BridgeProtocolError(
                f"action payload must carry exactly {t_a} pairs")
        out = []
        for a in actions:
            if not isinstance(a, (list, tuple)) or len(a) != 2:
                raise BridgeProtocolError("each action must be a [v, omega] pair")
            out.append((float(a[0]), float(a[1])))
        return out

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self._send({"kind": "bye"})
            except BridgeProtocolError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        if self.proc.stdin:
            self.proc.stdin.close()
