"""Client for external model servers speaking the line-JSON protocol.

A server is a process (spawned or reached over TCP) that answers one
JSON object per line. Every request carries a strictly increasing id
that the response must echo; the first exchange must be a handshake.
See docs/protocol.md for the wire contract.
"""

from __future__ import annotations

import json
import os
import re
import shlex
import socket
import subprocess
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .decode import DecoderConfig
from .errors import (
    BridgeUnavailable,
    ContextTooLong,
    EmbedderUnavailable,
    ModelFailure,
    OutOfVocab,
    ProtocolError,
    VersionMismatch,
)
from .lm import LOGSUMEXP_TOL, TokenDistribution

PROTOCOL_VERSION = 1
WIRE_MASS_TOL = 1e-4
SPARSE_MAX_P = 0.999

_ERROR_TYPES = {
    "protocol": ProtocolError,
    "version": VersionMismatch,
    "context_too_long": ContextTooLong,
    "model_failure": ModelFailure,
    "out_of_vocab": OutOfVocab,
    "unavailable": BridgeUnavailable,
}


class StdioTransport:
    """Spawn the server and talk over its stdin/stdout."""

    def __init__(self, command: Sequence[str] | str):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BridgeUnavailable(f"could not spawn {argv[0]!r}: {exc}") from exc

    def send_line(self, line: str) -> None:
        if self._proc.poll() is not None:
            raise BridgeUnavailable("server process has exited")
        assert self._proc.stdin is not None
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()

    def recv_line(self) -> str:
        assert self._proc.stdout is not None
        line = self._proc.stdout.readline()
        if not line:
            raise BridgeUnavailable("server closed its output stream")
        return line.rstrip("\n")

    def close(self) -> None:
        if self._proc.poll() is None:
            if self._proc.stdin is not None:
                self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class TcpTransport:
    """Connect to an already-running server socket."""

    def __init__(self, host: str, port: int, *, timeout: float = 10.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BridgeUnavailable(f"could not connect to {host}:{port}: {exc}") from exc
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")

    def send_line(self, line: str) -> None:
        try:
            self._file.write(line + "\n")
            self._file.flush()
        except OSError as exc:
            raise BridgeUnavailable(f"connection lost: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self._file.readline()
        except OSError as exc:
            raise BridgeUnavailable(f"connection lost: {exc}") from exc
        if not line:
            raise BridgeUnavailable("server closed the connection")
        return line.rstrip("\n")

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()


def open_transport(address: str):
    """Resolve an address of the form stdio:<command> or tcp:<host>:<port>.

    A bare `bridge` address reads the command from STORYDECODE_BRIDGE.
    """
    if address == "bridge":
        command = os.environ.get("STORYDECODE_BRIDGE", "")
        if not command:
            raise BridgeUnavailable(
                "no server address given and STORYDECODE_BRIDGE is not set"
            )
        return StdioTransport(command)
    if address.startswith("bridge:"):
        address = address[len("bridge:") :]
    if address.startswith("stdio:"):
        return StdioTransport(address[len("stdio:") :])
    if address.startswith("tcp:"):
        _, host, port = address.split(":", 2)
        return TcpTransport(host, int(port))
    raise BridgeUnavailable(f"unrecognized server address: {address!r}")


class BridgeConnection:
    """One handshaken session. Not thread-safe; one request in flight."""

    def __init__(self, transport, *, client_name: str = "storydecode"):
        self._transport = transport
        self._next_id = 1
        self.server_info = self.request(
            "handshake", {"protocol_version": PROTOCOL_VERSION, "client": client_name}
        )
        version = self.server_info.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise VersionMismatch(
                f"server speaks protocol {version!r}, need {PROTOCOL_VERSION}"
            )

    def raw_roundtrip(self, message: dict) -> dict:
        self._transport.send_line(json.dumps(message, separators=(",", ":")))
        line = self._transport.recv_line()
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"server sent invalid JSON: {line[:200]!r}") from exc

    def request(self, method: str, params: dict) -> dict:
        request_id = self._next_id
        self._next_id += 1
        reply = self.raw_roundtrip({"id": request_id, "method": method, "params": params})
        if reply.get("id") != request_id:
            raise ProtocolError(
                f"response id {reply.get('id')!r} does not echo request id {request_id}"
            )
        ok = reply.get("ok")
        if not isinstance(ok, bool):
            raise ProtocolError("response lacks the boolean ok field")
        if not ok:
            err = reply.get("error") or {}
            exc_type = _ERROR_TYPES.get(err.get("code"), ProtocolError)
            raise exc_type(err.get("message", "server error"))
        result = reply.get("result")
        if not isinstance(result, dict):
            raise ProtocolError("ok response carries no result object")
        return result

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "BridgeConnection":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def connect(address: str, *, client_name: str = "storydecode") -> BridgeConnection:
    return BridgeConnection(open_transport(address), client_name=client_name)


class BridgeModel:
    """LanguageModel backed by a protocol server.

    Dense rows are requested by default. When `configure_for` proves the
    downstream pipeline only looks at the head of the row (pure nucleus
    truncation below SPARSE_MAX_P, unit temperature, no anti-model), the
    client asks for the top slice plus the tail's pooled mass and spreads
    that mass uniformly; any step where the slice cannot cover the
    threshold falls back to a dense request, so results never change.
    """

    def __init__(self, conn: BridgeConnection, *, top_m: int = 64):
        self._conn = conn
        self.top_m = top_m
        info = conn.server_info
        specials = info.get("special_tokens") or {}
        try:
            self._vocab_size = int(info["vocab_size"])
            self._start_id = int(specials["start"])
            self._end_id = int(specials["end"])
        except KeyError as exc:
            raise ProtocolError(f"handshake lacks {exc.args[0]!r}") from exc
        self._sparse_p: float | None = None

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    @property
    def start_id(self) -> int:
        return self._start_id

    @property
    def end_id(self) -> int:
        return self._end_id

    def configure_for(self, config: DecoderConfig) -> None:
        eligible = (
            config.strategy == "nucleus"
            and config.p <= SPARSE_MAX_P
            and config.temperature == 1.0
            and config.mmi_lambda == 0.0
        )
        self._sparse_p = config.p if eligible else None

    def _full_distribution(self, context: Sequence[int]) -> TokenDistribution:
        result = self._conn.request(
            "next_logprobs", {"context": list(context), "mode": "full"}
        )
        if result.get("mode") != "full":
            raise ProtocolError(f"asked for full mode, got {result.get('mode')!r}")
        row = np.asarray(result["logprobs"], dtype=np.float64)
        if row.shape != (self._vocab_size,):
            raise ProtocolError(
                f"row has {row.shape[0] if row.ndim == 1 else 'bad'} entries, "
                f"vocabulary holds {self._vocab_size}"
            )
        if np.any(np.isnan(row)):
            raise ProtocolError("row contains NaN")
        mass = float(logsumexp(row))
        if abs(mass) > WIRE_MASS_TOL:
            raise ProtocolError(f"row mass {mass!r} is outside wire tolerance")
        if abs(mass) > LOGSUMEXP_TOL:
            row = row - mass
        return TokenDistribution(row)

    def _sparse_distribution(
        self, context: Sequence[int], p: float, top_m: int
    ) -> TokenDistribution | None:
        result = self._conn.request(
            "next_logprobs",
            {"context": list(context), "mode": "sparse", "top_m": top_m},
        )
        if result.get("mode") != "sparse":
            raise ProtocolError(f"asked for sparse mode, got {result.get('mode')!r}")
        entries = result["entries"]
        tail_logmass = result.get("tail_logmass")
        ids = np.array([e[0] for e in entries], dtype=np.int64)
        lps = np.array([e[1] for e in entries], dtype=np.float64)
        if ids.size == 0 or np.any(ids < 0) or np.any(ids >= self._vocab_size):
            raise ProtocolError("sparse entries carry invalid token ids")
        if np.any(np.diff(lps) > 0):
            raise ProtocolError("sparse entries are not sorted by probability")
        row = np.full(self._vocab_size, -np.inf, dtype=np.float64)
        row[ids] = lps
        if tail_logmass is None:
            return TokenDistribution(row)
        n_missing = self._vocab_size - ids.size
        if n_missing <= 0:
            raise ProtocolError("tail mass reported but no tokens are missing")
        cum = np.cumsum(np.exp(lps))
        if cum[-1] < p:
            return None
        spread = float(tail_logmass) - np.log(n_missing)
        if spread >= lps[-1]:
            return None
        missing = np.ones(self._vocab_size, dtype=bool)
        missing[ids] = False
        row[missing] = spread
        return TokenDistribution(row)

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        if self._sparse_p is not None:
            top_m = self.top_m
            while top_m < self._vocab_size:
                dist = self._sparse_distribution(context, self._sparse_p, top_m)
                if dist is not None:
                    return dist
                top_m = min(top_m * 2, self._vocab_size)
        return self._full_distribution(context)

    def encode_text(self, text: str) -> list[int]:
        result = self._conn.request("encode", {"text": text})
        return [int(i) for i in result["ids"]]

    def decode_text(self, ids: Sequence[int]) -> str:
        result = self._conn.request("decode", {"ids": list(ids)})
        return str(result["text"])


class BridgeTokenizer:
    """Tokenizer interface over a server's encode endpoint.

    Truncation binary-searches the longest whitespace-boundary character
    prefix within the token budget, so its output nests exactly like the
    in-process tokenizer's.
    """

    name = "bridge"

    def __init__(self, conn: BridgeConnection):
        self._conn = conn

    def tokenize(self, text: str) -> list[str]:
        return text.split()

    def count(self, text: str) -> int:
        if not text.strip():
            return 0
        return len(self._conn.request("encode", {"text": text})["ids"])

    def truncate(self, text: str, max_tokens: int) -> str:
        if max_tokens <= 0:
            return ""
        if self.count(text) <= max_tokens:
            return text
        ends = [m.end() for m in re.finditer(r"\S+", text)]
        lo, hi = 0, len(ends)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.count(text[: ends[mid - 1]]) <= max_tokens:
                lo = mid
            else:
                hi = mid - 1
        return text[: ends[lo - 1]] if lo else ""


class BridgeEmbedder:
    """Embedder interface over a server's embed endpoint.

    A server with no embedder attached answers embed requests with the
    `unavailable` error code, surfaced here as EmbedderUnavailable.
    """

    name = "bridge"

    def __init__(self, conn: BridgeConnection):
        self._conn = conn

    def embed(self, text: str) -> np.ndarray:
        try:
            result = self._conn.request("embed", {"text": text})
        except BridgeUnavailable as exc:
            raise EmbedderUnavailable(str(exc)) from exc
        vector = np.asarray(result["vector"], dtype=np.float64)
        if vector.ndim != 1 or not np.all(np.isfinite(vector)):
            raise ProtocolError("embedding is not a finite vector")
        return vector


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def run_conformance(conn: BridgeConnection) -> list[CheckResult]:
    """Probe a handshaken server for wire-contract violations."""
    checks: list[CheckResult] = []

    def check(name: str, fn: Callable[[], str]) -> None:
        try:
            checks.append(CheckResult(name, True, fn()))
        except Exception as exc:  # noqa: BLE001 - every failure is a finding
            checks.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    def hand() -> str:
        info = conn.server_info
        for key in ("protocol_version", "vocab_size", "model_name", "special_tokens"):
            if key not in info:
                raise ProtocolError(f"handshake lacks {key}")
        specials = info["special_tokens"]
        for name in ("start", "end"):
            if name not in specials:
                raise ProtocolError(f"special_tokens lacks {name!r}")
            if not 0 <= specials[name] < info["vocab_size"]:
                raise ProtocolError(f"special token {name!r} id out of range")
        return f"model {info['model_name']!r}, vocab_size={info['vocab_size']}"

    def second_handshake() -> str:
        try:
            conn.request("handshake", {"protocol_version": PROTOCOL_VERSION})
        except ProtocolError:
            return "repeated handshake rejected"
        raise ProtocolError("server accepted a second handshake")

    def vocab() -> str:
        info = conn.request("vocab_info", {})
        for key in ("vocab_size", "model_name", "special_tokens"):
            if key not in info:
                raise ProtocolError(f"vocab_info lacks {key}")
        hand_info = conn.server_info
        if info["vocab_size"] != hand_info["vocab_size"]:
            raise ProtocolError("vocab_info and handshake disagree on vocab_size")
        if info["special_tokens"] != hand_info["special_tokens"]:
            raise ProtocolError("vocab_info and handshake disagree on special tokens")
        return f"vocab_size={info['vocab_size']}"

    def round_trip() -> str:
        ids = conn.request("encode", {"text": "the quick brown fox"})["ids"]
        text = conn.request("decode", {"ids": ids})["text"]
        again = conn.request("encode", {"text": text})["ids"]
        if again != ids:
            raise ProtocolError(f"encode(decode(ids)) changed ids: {ids} -> {again}")
        return f"{len(ids)} ids round-tripped"

    def full_row() -> str:
        info = conn.server_info
        start_id = info["special_tokens"]["start"]
        result = conn.request(
            "next_logprobs", {"context": [start_id], "mode": "full"}
        )
        row = np.asarray(result["logprobs"], dtype=np.float64)
        if row.shape[0] != info["vocab_size"]:
            raise ProtocolError("row length differs from vocab_size")
        mass = float(logsumexp(row))
        if abs(mass) > WIRE_MASS_TOL:
            raise ProtocolError(f"row mass {mass!r} outside tolerance")
        return f"mass error {abs(mass):.2e}"

    def sparse_row() -> str:
        info = conn.server_info
        start_id = info["special_tokens"]["start"]
        full = np.asarray(
            conn.request("next_logprobs", {"context": [start_id], "mode": "full"})[
                "logprobs"
            ],
            dtype=np.float64,
        )
        result = conn.request(
            "next_logprobs",
            {"context": [start_id], "mode": "sparse", "top_m": 4},
        )
        entries = result["entries"]
        lps = [e[1] for e in entries]
        if any(b > a for a, b in zip(lps, lps[1:])):
            raise ProtocolError("entries not sorted by probability")
        for token_id, lp in entries:
            if abs(full[token_id] - lp) > 1e-5:
                raise ProtocolError(f"entry for token {token_id} disagrees with full row")
        tail = result.get("tail_logmass")
        if len(entries) < info["vocab_size"]:
            if tail is None:
                raise ProtocolError("missing tail_logmass with tokens outstanding")
            mass = float(np.logaddexp(logsumexp(np.asarray(lps)), tail))
            if abs(mass) > WIRE_MASS_TOL:
                raise ProtocolError(f"entries+tail mass {mass!r} outside tolerance")
        elif tail is not None:
            raise ProtocolError("tail_logmass present but no tokens are missing")
        return f"{len(entries)} entries consistent with full row"

    def id_echo() -> str:
        before = conn._next_id
        conn.request("vocab_info", {})
        conn.request("vocab_info", {})
        if conn._next_id != before + 2:
            raise ProtocolError("request ids not strictly increasing")
        return "ids echoed in order"

    def bad_method() -> str:
        try:
            conn.request("no_such_method", {})
        except ProtocolError:
            return "unknown method rejected"
        raise ProtocolError("server accepted an unknown method")

    check("handshake_fields", hand)
    check("second_handshake_rejected", second_handshake)
    check("vocab_info", vocab)
    check("encode_decode_round_trip", round_trip)
    check("full_row_mass", full_row)
    check("sparse_row_consistency", sparse_row)
    check("id_echo", id_echo)
    check("unknown_method", bad_method)
    return checks


def load_transcript(path: str) -> list[dict]:
    """Golden transcripts are NDJSON lines {dir: send|recv, msg: {...}}."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def json_close(a, b, *, tol: float = 1e-9) -> bool:
    """Structural equality with a numeric tolerance for floats."""
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        fa, fb = float(a), float(b)
        return abs(fa - fb) <= tol * max(1.0, abs(fa), abs(fb))
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(json_close(x, y, tol=tol) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_close(a[k], b[k], tol=tol) for k in a)
    return a == b


def replay_transcript(transport, transcript: list[dict], *, tol: float = 1e-9) -> None:
    """Drive a fresh (un-handshaken) transport through a recorded session
    and insist each reply matches the recording within tolerance."""
    pending: dict | None = None
    for step, line in enumerate(transcript):
        if line["dir"] == "send":
            if pending is not None:
                raise ProtocolError(f"transcript line {step}: two sends in a row")
            pending = line["msg"]
            transport.send_line(json.dumps(pending, separators=(",", ":")))
        else:
            if pending is None:
                raise ProtocolError(f"transcript line {step}: recv without a send")
            reply = json.loads(transport.recv_line())
            if not json_close(reply, line["msg"], tol=tol):
                raise ProtocolError(
                    f"transcript line {step}: reply diverged\n"
                    f"  expected: {json.dumps(line['msg'], sort_keys=True)[:400]}\n"
                    f"  received: {json.dumps(reply, sort_keys=True)[:400]}"
                )
            pending = None
