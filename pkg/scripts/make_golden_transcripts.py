"""Record the golden wire transcript for line-JSON model servers.

Drives the reference server (tests/fake_bridge.py) through one session
covering every method plus the two mandated error paths, and writes the
exchange as NDJSON lines {"dir": "send"|"recv", "msg": {...}}. Any
server claiming protocol compatibility must reproduce each recv line
within 1e-9 when replayed with replay_transcript.

The output is committed at docs/golden/session.ndjson; run this script
only to regenerate it after a protocol change.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from storydecode.bridge_client import StdioTransport  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))


class RecordingTransport:
    def __init__(self, inner):
        self.inner = inner
        self.lines: list[dict] = []

    def send_line(self, line: str) -> None:
        self.lines.append({"dir": "send", "msg": json.loads(line)})
        self.inner.send_line(line)

    def recv_line(self) -> str:
        line = self.inner.recv_line()
        self.lines.append({"dir": "recv", "msg": json.loads(line)})
        return line

    def close(self) -> None:
        self.inner.close()


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--model",
        default=os.path.join(HERE, os.pardir, "docs", "golden", "mock_model.json"),
    )
    parser.add_argument(
        "--out",
        default=os.path.join(HERE, os.pardir, "docs", "golden", "session.ndjson"),
    )
    args = parser.parse_args()

    server_cmd = [
        sys.executable,
        os.path.join(HERE, os.pardir, "tests", "fake_bridge.py"),
        "--model",
        args.model,
    ]
    transport = RecordingTransport(StdioTransport(server_cmd))

    def roundtrip(request_id: int, method: str, params: dict) -> dict:
        transport.send_line(
            json.dumps(
                {"id": request_id, "method": method, "params": params},
                separators=(",", ":"),
            )
        )
        return json.loads(transport.recv_line())

    reply = roundtrip(1, "handshake", {"protocol_version": 1, "client": "storydecode"})
    assert reply["ok"], reply
    assert roundtrip(2, "vocab_info", {})["ok"]
    ids = roundtrip(3, "encode", {"text": "the quick brown fox"})["result"]["ids"]
    assert roundtrip(4, "decode", {"ids": ids})["result"]["text"] == "the quick brown fox"
    assert roundtrip(5, "next_logprobs", {"context": [0], "mode": "full"})["ok"]
    assert roundtrip(
        6, "next_logprobs", {"context": [0], "mode": "sparse", "top_m": 4}
    )["ok"]
    assert roundtrip(
        7, "next_logprobs", {"context": [5], "mode": "sparse", "top_m": 32}
    )["ok"]
    assert roundtrip(8, "embed", {"text": "the quick brown fox"})["ok"]
    assert not roundtrip(9, "no_such_method", {})["ok"]
    assert not roundtrip(10, "handshake", {"protocol_version": 1})["ok"]
    transport.close()

    with open(args.out, "w", encoding="utf-8") as fh:
        for line in transport.lines:
            fh.write(json.dumps(line, separators=(",", ":")) + "\n")
    print(f"wrote {len(transport.lines)} transcript lines to {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
