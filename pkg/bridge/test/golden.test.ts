import { readFileSync } from "fs";

import { describe, expect, it } from "vitest";

import { Session } from "../src/server";
import { SESSION_PATH, freshModel, jsonClose } from "./helpers";

interface TranscriptEntry {
  dir: "send" | "recv";
  msg: Record<string, unknown>;
}

function loadTranscript(): Array<[Record<string, unknown>, Record<string, unknown>]> {
  const entries: TranscriptEntry[] = readFileSync(SESSION_PATH, "utf-8")
    .split("\n")
    .filter((line) => line.trim() !== "")
    .map((line) => JSON.parse(line) as TranscriptEntry);
  const pairs: Array<[Record<string, unknown>, Record<string, unknown>]> = [];
  for (let i = 0; i < entries.length; i += 2) {
    expect(entries[i].dir).toBe("send");
    expect(entries[i + 1].dir).toBe("recv");
    pairs.push([entries[i].msg, entries[i + 1].msg]);
  }
  return pairs;
}

describe("recorded session", () => {
  it("replays every exchange verbatim", () => {
    const session = new Session(freshModel());
    for (const [sent, expected] of loadTranscript()) {
      const got = JSON.parse(session.respond(JSON.stringify(sent)));
      expect(
        jsonClose(got, expected),
        `request ${JSON.stringify(sent)}\nexpected ${JSON.stringify(expected)}\ngot      ${JSON.stringify(got)}`,
      ).toBe(true);
    }
  });

  it("covers the whole method surface", () => {
    const methods = new Set(loadTranscript().map(([sent]) => sent.method as string));
    for (const method of ["handshake", "vocab_info", "encode", "decode", "next_logprobs", "embed"]) {
      expect(methods).toContain(method);
    }
  });

  it("exercises both the happy path and the error path", () => {
    const oks = loadTranscript().map(([, reply]) => reply.ok);
    expect(oks).toContain(true);
    expect(oks).toContain(false);
  });
});
