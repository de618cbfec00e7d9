/**
 * Per-connection request dispatch.
 *
 * A Session is stateless between requests except for the handshake
 * latch: the handshake must come first and exactly once, every later
 * request is answered from the model table alone. Context always
 * arrives in full, so connections can be dropped and reopened freely.
 */

import {
  CONTEXT_CAP,
  ErrReply,
  OkReply,
  PROTOCOL_VERSION,
  WireError,
  repr,
} from "./protocol";
import { MockModel } from "./mock";

export interface SessionOptions {
  embedder?: boolean;
}

export class Session {
  private handshaken = false;
  private readonly embedder: boolean;

  constructor(
    private readonly model: MockModel,
    options: SessionOptions = {},
  ) {
    this.embedder = options.embedder !== false;
  }

  /** One request line in, one response line out. */
  respond(line: string): string {
    let replyId: unknown = null;
    let reply: OkReply | ErrReply;
    try {
      const message = JSON.parse(line) as Record<string, unknown>;
      replyId = message.id === undefined ? null : message.id;
      const method = message.method;
      const params = (message.params ?? {}) as Record<string, unknown>;
      if (typeof method !== "string") {
        throw new WireError("protocol", "request lacks a method string");
      }
      reply = { id: replyId, ok: true, result: this.handle(method, params) };
    } catch (exc) {
      if (exc instanceof WireError) {
        reply = { id: replyId, ok: false, error: { code: exc.code, message: exc.message } };
      } else {
        const message = exc instanceof Error ? exc.message : String(exc);
        reply = { id: replyId, ok: false, error: { code: "protocol", message: `bad request: ${message}` } };
      }
    }
    return JSON.stringify(reply);
  }

  private handle(method: string, params: Record<string, unknown>): Record<string, unknown> {
    if (method === "handshake") {
      if (this.handshaken) {
        throw new WireError("protocol", "handshake already completed");
      }
      if (params.protocol_version !== PROTOCOL_VERSION) {
        throw new WireError(
          "version",
          `server speaks protocol ${PROTOCOL_VERSION}, client sent ${repr(params.protocol_version)}`,
        );
      }
      this.handshaken = true;
      return {
        protocol_version: PROTOCOL_VERSION,
        vocab_size: this.model.vocabSize,
        model_name: this.model.modelName,
        special_tokens: this.model.specialTokens,
      };
    }
    if (!this.handshaken) {
      throw new WireError("protocol", "handshake required before any other method");
    }
    switch (method) {
      case "vocab_info":
        return {
          vocab_size: this.model.vocabSize,
          model_name: this.model.modelName,
          special_tokens: this.model.specialTokens,
        };
      case "encode":
        return { ids: this.model.encode(this.textParam(params)) };
      case "decode":
        return { text: this.model.decode(this.idsParam(params)) };
      case "next_logprobs":
        return this.nextLogprobs(params);
      case "embed":
        return this.embed(params);
      default:
        throw new WireError("protocol", `unknown method ${repr(method)}`);
    }
  }

  private textParam(params: Record<string, unknown>): string {
    const text = params.text;
    if (typeof text !== "string") {
      throw new WireError("protocol", "encode needs a text string");
    }
    return text;
  }

  private idsParam(params: Record<string, unknown>): number[] {
    const ids = params.ids;
    if (!Array.isArray(ids)) {
      throw new WireError("protocol", "decode needs an ids list");
    }
    return ids as number[];
  }

  private nextLogprobs(params: Record<string, unknown>): Record<string, unknown> {
    const context = params.context;
    if (!Array.isArray(context)) {
      throw new WireError("protocol", "next_logprobs needs a context list");
    }
    if (context.length > CONTEXT_CAP) {
      throw new WireError(
        "context_too_long",
        `context holds ${context.length} ids, cap is ${CONTEXT_CAP}`,
      );
    }
    for (const id of context) {
      if (!Number.isInteger(id) || (id as number) < 0 || (id as number) >= this.model.vocabSize) {
        throw new WireError("out_of_vocab", `context id out of range: ${repr(id)}`);
      }
    }
    const row = this.model.rowFor(context as number[]);
    const mode = params.mode ?? "full";
    if (mode === "full") {
      return { mode: "full", logprobs: [...row] };
    }
    if (mode === "sparse") {
      const topM = params.top_m;
      if (!Number.isInteger(topM) || (topM as number) < 1) {
        throw new WireError("protocol", `sparse mode needs top_m >= 1, got ${repr(topM)}`);
      }
      const sparse = this.model.sparseRow(row, topM as number);
      const result: Record<string, unknown> = { mode: "sparse", entries: sparse.entries };
      if (sparse.tailLogmass !== undefined) {
        result.tail_logmass = sparse.tailLogmass;
      }
      return result;
    }
    throw new WireError("protocol", `unknown next_logprobs mode ${repr(mode)}`);
  }

  private embed(params: Record<string, unknown>): Record<string, unknown> {
    if (!this.embedder) {
      throw new WireError("unavailable", "no embedder attached to this server");
    }
    return { vector: this.model.embed(this.textParam(params)) };
  }
}
