import path from "path";
import { fileURLToPath } from "url";

import { MockModel, loadModelTable } from "../src/mock";
import { Session, SessionOptions } from "../src/server";

const HERE = path.dirname(fileURLToPath(import.meta.url));

export const MODEL_PATH = path.resolve(HERE, "..", "..", "docs", "golden", "mock_model.json");
export const SESSION_PATH = path.resolve(HERE, "..", "..", "docs", "golden", "session.ndjson");
export const CLI_DIST = path.resolve(HERE, "..", "dist", "cli.js");

export function freshModel(): MockModel {
  return new MockModel(loadModelTable(MODEL_PATH));
}

export interface Reply {
  id: unknown;
  ok: boolean;
  result?: Record<string, unknown>;
  error?: { code: string; message: string };
}

export function request(
  session: Session,
  id: number,
  method: string,
  params: Record<string, unknown> = {},
): Reply {
  return JSON.parse(session.respond(JSON.stringify({ id, method, params }))) as Reply;
}

export function handshaken(options: SessionOptions = {}): Session {
  const session = new Session(freshModel(), options);
  const reply = request(session, 1, "handshake", { protocol_version: 1 });
  if (!reply.ok) throw new Error(`handshake failed: ${JSON.stringify(reply)}`);
  return session;
}

/** Structural equality with a relative tolerance for numbers. */
export function jsonClose(a: unknown, b: unknown, tol = 1e-9): boolean {
  if (typeof a === "boolean" || typeof b === "boolean") return a === b;
  if (typeof a === "number" && typeof b === "number") {
    if (Number.isInteger(a) && Number.isInteger(b)) return a === b;
    return Math.abs(a - b) <= tol * Math.max(1.0, Math.abs(a), Math.abs(b));
  }
  if (Array.isArray(a) && Array.isArray(b)) {
    return a.length === b.length && a.every((x, i) => jsonClose(x, b[i], tol));
  }
  if (a !== null && b !== null && typeof a === "object" && typeof b === "object") {
    const keysA = Object.keys(a).sort();
    const keysB = Object.keys(b).sort();
    if (keysA.length !== keysB.length || keysA.some((k, i) => k !== keysB[i])) {
      return false;
    }
    return keysA.every((k) =>
      jsonClose((a as Record<string, unknown>)[k], (b as Record<string, unknown>)[k], tol),
    );
  }
  return a === b;
}

export function logSumExp(values: number[]): number {
  const top = Math.max(...values);
  let total = 0;
  for (const value of values) total += Math.exp(value - top);
  return top + Math.log(total);
}
