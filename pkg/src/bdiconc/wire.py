"""Binary encoding of :class:`~bdiconc.agent.Message` and stream framing.

Frame layout (all integers big-endian)::

    u32  length of everything that follows
    u8   frame type (b"M" message, other letters are JSON control frames)
    ...  body

Message body, version 1::

    u8   version (= 1)
    str  sender
    str  recipient
    str  performative
    u64  send_seq
    lit  payload

    str  := u32 byte length, UTF-8 bytes
    lit  := u8 tag, then
            tag 0 (int64)  i64
            tag 1 (str)    str
            tag 2 (tuple)  u32 count, count x lit
            tag 3 (bigint) str holding the decimal digits
"""
import json
import struct

from .agent import Message

VERSION = 1
MAX_FRAME = 16 * 1024 * 1024

FRAME_MESSAGE = b"M"
FRAME_HELLO = b"H"
FRAME_CONFIG = b"C"
FRAME_ACK = b"A"
FRAME_ERROR = b"E"
FRAME_TRACE = b"T"
FRAME_STATUS = b"S"
FRAME_STOP = b"Q"

_U32 = struct.Struct("!I")
_U64 = struct.Struct("!Q")
_I64 = struct.Struct("!q")


class WireError(ValueError):
    pass


class ConnectionLost(ConnectionError):
    pass


def _put_str(out, s):
    raw = s.encode("utf-8")
    out += _U32.pack(len(raw))
    out += raw


def _put_lit(out, v):
    if isinstance(v, bool):
        raise WireError("booleans are not literals")
    if isinstance(v, int):
        if -(1 << 63) <= v < (1 << 63):
            out.append(0)
            out += _I64.pack(v)
        else:
            out.append(3)
            _put_str(out, str(v))
    elif isinstance(v, str):
        out.append(1)
        _put_str(out, v)
    elif isinstance(v, tuple):
        out.append(2)
        out += _U32.pack(len(v))
        for item in v:
            _put_lit(out, item)
    else:
        raise WireError(f"cannot encode {type(v).__name__}")


def encode_message(msg):
    out = bytearray([VERSION])
    _put_str(out, msg.sender)
    _put_str(out, msg.recipient)
    _put_str(out, msg.performative)
    out += _U64.pack(msg.send_seq)
    _put_lit(out, msg.payload)
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise WireError("truncated message")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def str(self):
        (n,) = _U32.unpack(self.take(4))
        try:
            return bytes(self.take(n)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError(str(exc)) from None

    def lit(self):
        tag = self.u8()
        if tag == 0:
            return _I64.unpack(self.take(8))[0]
        if tag == 1:
            return self.str()
        if tag == 2:
            (n,) = _U32.unpack(self.take(4))
            return tuple(self.lit() for _ in range(n))
        if tag == 3:
            return int(self.str())
        raise WireError(f"unknown literal tag {tag}")


def decode_message(data):
    r = _Reader(data)
    version = r.u8()
    if version != VERSION:
        raise WireError(f"unsupported message version {version}")
    sender = r.str()
    recipient = r.str()
    performative = r.str()
    (seq,) = _U64.unpack(r.take(8))
    payload = r.lit()
    if r.pos != len(r.buf):
        raise WireError("trailing bytes after message")
    return Message(sender, recipient, performative, payload, seq)


def frame(kind, body):
    return _U32.pack(len(body) + 1) + kind + body


def json_frame(kind, obj):
    return frame(kind, json.dumps(obj, separators=(",", ":")).encode("utf-8"))


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionLost("peer closed the stream")
        buf += chunk
    return bytes(buf)


def read_frame(sock):
    """Block until one frame arrives; returns (kind, body)."""
    (n,) = _U32.unpack(_recv_exact(sock, 4))
    if n < 1 or n > MAX_FRAME:
        raise WireError(f"bad frame length {n}")
    data = _recv_exact(sock, n)
    return data[:1], data[1:]


def parse_json(body):
    return json.loads(body.decode("utf-8"))
