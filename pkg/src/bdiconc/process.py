"""One-Agent-One-Process: each agent in a child interpreter, messages relayed
by a hub in the coordinator over loopback TCP.

The hub owns the listening socket. Children connect, announce their name
(``H``), receive their agent spec (``C``), then run a single-carrier agent
loop. Every ``M`` frame a child sends is forwarded to the recipient's
connection and answered with ``A`` (delivered) or ``E`` (delivery error).
Children stream their trace events (``T``) and idle status (``S``) back to
the hub. ``Q`` asks a child to exit.
"""
from __future__ import annotations

import logging
import os
import queue
import socket
import subprocess
import sys
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass

from . import wire
from .agent import Agent, InternalModelConfig
from .runtime import DeliveryReceipt
from .strategy import EnvironmentUnavailable
from .tracing import TraceEvent, merge

log = logging.getLogger(__name__)

LOOPBACK = "127.0.0.1"
CONNECT_TIMEOUT = 15.0
REPLY_TIMEOUT = 5.0
PARK_INTERVAL = 0.001


@dataclass
class ProcessHandle:
    name: str
    popen: subprocess.Popen

    @property
    def pid(self):
        return self.popen.pid

    def alive(self):
        return self.popen.poll() is None


def _child_env():
    env = dict(os.environ)
    src = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "") if env.get("PYTHONPATH") else src
    return env


def spawn_process_agent(spec, endpoint):
    """Start a child interpreter that will run ``spec`` against the hub at ``endpoint``."""
    host, port = endpoint
    try:
        popen = subprocess.Popen(
            [sys.executable, "-m", "bdiconc.process", host, str(port), spec.name],
            env=_child_env(),
            stdin=subprocess.DEVNULL,
        )
    except OSError as exc:
        raise EnvironmentUnavailable(f"cannot spawn agent process: {exc}") from None
    return ProcessHandle(spec.name, popen)


class _Peer:
    def __init__(self, name, sock, handle):
        self.name = name
        self.sock = sock
        self.handle = handle
        self.send_lock = threading.Lock()
        self.connected = True
        self.events = []
        self.status = None
        self.forwarded = 0
        self.reader = None

    def send(self, data):
        with self.send_lock:
            self.sock.sendall(data)

    def reachable(self):
        return self.connected and self.handle.alive()


class ProcessDriver:
    """Hub side of the 1A1P strategy."""

    def __init__(self, config, kind, sink):
        self.config = config
        self.kind = kind
        self.sink = sink
        self.threshold = config.quiescence.idle_cycles
        self.peers = {}
        self.handles = {}
        self.delivered = Counter()
        self.errors = 0
        self._lock = threading.Lock()
        self._server = None
        self.port = None

    # -- lifecycle

    def start(self):
        from .specfile import agent_to_dict

        try:
            self._server = socket.create_server((LOOPBACK, self.kind.port or 0))
        except OSError as exc:
            raise EnvironmentUnavailable(f"cannot bind loopback port {self.kind.port}: {exc}") from None
        self.port = self._server.getsockname()[1]
        for spec in self.config.agents:
            self.handles[spec.name] = spawn_process_agent(spec, (LOOPBACK, self.port))
        self._server.settimeout(0.2)
        deadline = time.monotonic() + CONNECT_TIMEOUT
        while len(self.peers) < len(self.handles):
            if time.monotonic() > deadline or any(not h.alive() for h in self.handles.values()):
                self._kill_all()
                raise EnvironmentUnavailable("agent processes failed to connect")
            try:
                sock, _ = self._server.accept()
            except socket.timeout:
                continue
            sock.settimeout(CONNECT_TIMEOUT)
            kind, body = wire.read_frame(sock)
            name = body.decode("utf-8")
            if kind != wire.FRAME_HELLO or name not in self.handles or name in self.peers:
                sock.close()
                continue
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self.peers[name] = _Peer(name, sock, self.handles[name])
        internal = asdict(self.config.internal)
        for spec in self.config.agents:
            peer = self.peers[spec.name]
            peer.reader = threading.Thread(target=self._read_loop, args=(peer,), name=f"hub-{peer.name}", daemon=True)
            peer.reader.start()
        for spec in self.config.agents:
            cfg = {"agent": agent_to_dict(spec), "internal": internal, "idle_cycles": self.threshold}
            self.peers[spec.name].send(wire.json_frame(wire.FRAME_CONFIG, cfg))

    def _read_loop(self, peer):
        try:
            while True:
                kind, body = wire.read_frame(peer.sock)
                if kind == wire.FRAME_MESSAGE:
                    self._forward(peer, body)
                elif kind == wire.FRAME_TRACE:
                    peer.events.append(TraceEvent.from_dict(wire.parse_json(body)))
                elif kind == wire.FRAME_STATUS:
                    peer.status = wire.parse_json(body)
        except (wire.ConnectionLost, OSError, wire.WireError):
            pass
        finally:
            peer.connected = False

    def _forward(self, sender, body):
        try:
            msg = wire.decode_message(body)
        except wire.WireError as exc:
            self._reply(sender, wire.FRAME_ERROR, {"error": f"bad message: {exc}"})
            return
        target = self.peers.get(msg.recipient)
        error = None
        if target is None:
            error = f"unknown recipient {msg.recipient!r}"
        elif not target.reachable():
            error = f"connection to {msg.recipient!r} lost"
        else:
            try:
                with self._lock:
                    target.forwarded += 1
                target.send(wire.frame(wire.FRAME_MESSAGE, body))
            except OSError as exc:
                with self._lock:
                    target.forwarded -= 1
                error = f"connection to {msg.recipient!r} lost ({exc})"
        with self._lock:
            if error:
                self.errors += 1
            else:
                self.delivered[(msg.sender, msg.recipient, msg.performative)] += 1
        if error:
            self._reply(sender, wire.FRAME_ERROR, {"seq": msg.send_seq, "error": error})
        else:
            self._reply(sender, wire.FRAME_ACK, {"seq": msg.send_seq})

    def _reply(self, peer, kind, obj):
        try:
            peer.send(wire.json_frame(kind, obj))
        except OSError:
            pass

    def kill(self, name):
        """Fault injection: terminate one agent process abruptly."""
        handle = self.handles[name]
        handle.popen.kill()
        handle.popen.wait()

    def _kill_all(self):
        for h in self.handles.values():
            if h.alive():
                h.popen.kill()
            h.popen.wait()

    def stop(self):
        for peer in self.peers.values():
            if peer.reachable():
                self._reply(peer, wire.FRAME_STOP, {})
        deadline = time.monotonic() + 5.0
        for h in self.handles.values():
            try:
                h.popen.wait(max(0.0, deadline - time.monotonic()))
            except subprocess.TimeoutExpired:
                h.popen.kill()
                h.popen.wait()
        for peer in self.peers.values():
            if peer.reader is not None:
                peer.reader.join(2.0)
            try:
                peer.sock.close()
            except OSError:
                pass
        if self._server is not None:
            self._server.close()
        self.sink.ingest(merge(*(p.events for p in self.peers.values())))

    # -- observation

    def _progress(self):
        with self._lock:
            total = sum(p.forwarded for p in self.peers.values())
        return total + sum((p.status or {}).get("cycle", 0) for p in self.peers.values())

    def is_quiescent(self):
        before = self._progress()
        for peer in self.peers.values():
            if not peer.reachable():
                continue
            st = peer.status
            if st is None:
                return False
            if st.get("failed"):
                continue
            if st["idle_streak"] < self.threshold or st["mailbox"] or st["received"] != peer.forwarded:
                return False
        return self._progress() == before

    def message_counts(self):
        with self._lock:
            return dict(self.delivered)

    def stats(self):
        with self._lock:
            delivered = sum(self.delivered.values())
            errors = self.errors
        return {
            "sent": delivered + errors,
            "delivered": delivered,
            "delivery_errors": errors,
            "processes": {n: h.pid for n, h in self.handles.items()},
            "dead": sorted(n for n, h in self.handles.items() if not h.alive()),
            "carrier_high_water": len(self.handles),
            "port": self.port,
        }


# -- child side


class _ChildEffector:
    def __init__(self, sock):
        self.sock = sock
        self.send_lock = threading.Lock()
        self.replies = queue.Queue()
        self._seq = 0
        self._seq_lock = threading.Lock()

    def _send(self, data):
        with self.send_lock:
            self.sock.sendall(data)

    def record(self, event):
        with self._seq_lock:
            self._seq += 1
            seq = self._seq
        try:
            self._send(wire.json_frame(wire.FRAME_TRACE, asdict(event.with_seq(seq))))
        except OSError:
            return None
        return seq

    def deliver(self, message):
        t0 = time.perf_counter_ns()
        try:
            self._send(wire.frame(wire.FRAME_MESSAGE, wire.encode_message(message)))
            kind, reply = self.replies.get(timeout=REPLY_TIMEOUT)
        except OSError as exc:
            return DeliveryReceipt(False, time.perf_counter_ns() - t0, f"stream broken ({exc})")
        except queue.Empty:
            return DeliveryReceipt(False, time.perf_counter_ns() - t0, "no reply from hub")
        latency = time.perf_counter_ns() - t0
        if kind == wire.FRAME_ACK:
            return DeliveryReceipt(True, latency)
        return DeliveryReceipt(False, latency, reply.get("error", "delivery failed"))


def child_main(host, port, name):
    from .specfile import agent_from_dict

    sock = socket.create_connection((host, port))
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    sock.sendall(wire.frame(wire.FRAME_HELLO, name.encode("utf-8")))
    kind, body = wire.read_frame(sock)
    if kind != wire.FRAME_CONFIG:
        return 2
    cfg = wire.parse_json(body)
    effector = _ChildEffector(sock)
    agent = Agent(agent_from_dict(cfg["agent"]), InternalModelConfig(**cfg["internal"]), effector)
    threshold = cfg["idle_cycles"]
    stop = threading.Event()
    wake = threading.Event()
    received = [0]

    def reader():
        try:
            while True:
                kind, body = wire.read_frame(sock)
                if kind == wire.FRAME_MESSAGE:
                    msg = wire.decode_message(body)
                    with agent.lock:
                        agent.mailbox.append(msg)
                        received[0] += 1
                    wake.set()
                elif kind in (wire.FRAME_ACK, wire.FRAME_ERROR):
                    effector.replies.put((kind, wire.parse_json(body)))
                elif kind == wire.FRAME_STOP:
                    break
        except (wire.ConnectionLost, OSError, wire.WireError):
            pass
        stop.set()
        wake.set()

    threading.Thread(target=reader, name="transport", daemon=True).start()

    last = None
    while not stop.is_set():
        wake.clear()
        if not agent.failed:
            agent.step()
        with agent.lock:
            status = {
                "idle_streak": min(agent.idle_streak, threshold),
                "mailbox": len(agent.mailbox),
                "received": received[0],
                "cycle": agent.cycle,
                "failed": agent.failed,
            }
        if status != last:
            try:
                effector._send(wire.json_frame(wire.FRAME_STATUS, status))
            except OSError:
                break
            last = status
        if agent.failed or not agent.active:
            wake.wait(PARK_INTERVAL if agent.idle_streak <= threshold else 0.05)
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    sock.close()
    return 0


if __name__ == "__main__":
    sys.exit(child_main(sys.argv[1], int(sys.argv[2]), sys.argv[3]))
