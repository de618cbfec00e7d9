/**
 * Wire protocol types for the line-JSON model server.
 *
 * One JSON object per line in each direction. Every request carries an
 * integer id and a method name; every response echoes the id and
 * carries a boolean `ok` with either a result object or an error
 * {code, message}. The handshake must be the first exchange on a
 * connection. The full contract lives in docs/protocol.md.
 */

export const PROTOCOL_VERSION = 1;

export const CONTEXT_CAP = 512;

export type ErrorCode =
  | "protocol"
  | "version"
  | "context_too_long"
  | "model_failure"
  | "out_of_vocab"
  | "unavailable";

export interface BridgeRequest {
  id: number;
  method: string;
  params?: Record<string, unknown>;
}

export interface OkReply {
  id: unknown;
  ok: true;
  result: Record<string, unknown>;
}

export interface ErrReply {
  id: unknown;
  ok: false;
  error: { code: ErrorCode; message: string };
}

export type BridgeReply = OkReply | ErrReply;

export class WireError extends Error {
  constructor(
    public readonly code: ErrorCode,
    message: string,
  ) {
    super(message);
    this.name = "WireError";
  }
}

/** Render a value the way the error messages quote it. */
export function repr(value: unknown): string {
  if (typeof value === "string") return `'${value}'`;
  if (value === undefined || value === null) return "None";
  return String(value);
}
