/**
 * Fixture-driven model: a precomputed table of log-softmax rows, a
 * whitespace tokenizer over a fixed vocabulary, and a mean-pooled
 * token-vector embedder. No ML runtime; the table fully determines
 * every answer, which is what makes golden transcripts possible.
 */

import { readFileSync } from "fs";

import { WireError, repr } from "./protocol";

export interface ModelTable {
  protocol_version: number;
  model_name: string;
  vocab: string[];
  special_tokens: Record<string, number>;
  rows: number[][];
  token_vectors: number[][];
  embedding_dim: number;
}

export function loadModelTable(path: string): ModelTable {
  return JSON.parse(readFileSync(path, "utf-8")) as ModelTable;
}

function logSumExp(values: number[]): number {
  const top = Math.max(...values);
  if (!Number.isFinite(top)) return top;
  let total = 0;
  for (const value of values) total += Math.exp(value - top);
  return top + Math.log(total);
}

export interface SparseRow {
  entries: Array<[number, number]>;
  tailLogmass?: number;
}

export class MockModel {
  readonly vocab: string[];
  readonly modelName: string;
  readonly specialTokens: Record<string, number>;
  private readonly ids: Map<string, number>;
  private readonly rows: number[][];
  private readonly vectors: number[][];

  constructor(table: ModelTable) {
    this.vocab = table.vocab;
    this.modelName = table.model_name;
    this.specialTokens = table.special_tokens;
    this.rows = table.rows;
    this.vectors = table.token_vectors;
    this.ids = new Map(table.vocab.map((token, i) => [token, i]));
  }

  get vocabSize(): number {
    return this.vocab.length;
  }

  encode(text: string): number[] {
    const out: number[] = [];
    for (const word of text.split(/\s+/)) {
      if (!word) continue;
      const id = this.ids.get(word);
      if (id === undefined) {
        throw new WireError("out_of_vocab", `token not in vocabulary: ${repr(word)}`);
      }
      out.push(id);
    }
    return out;
  }

  decode(ids: number[]): string {
    const words: string[] = [];
    for (const id of ids) {
      if (!Number.isInteger(id) || id < 0 || id >= this.vocab.length) {
        throw new WireError("out_of_vocab", `token id out of range: ${repr(id)}`);
      }
      words.push(this.vocab[id]);
    }
    return words.join(" ");
  }

  rowFor(context: number[]): number[] {
    const rowIndex = context.length === 0 ? 0 : context[context.length - 1] % this.rows.length;
    return this.rows[rowIndex];
  }

  sparseRow(row: number[], topM: number): SparseRow {
    const order = row.map((_, i) => i).sort((a, b) => row[b] - row[a] || a - b);
    const head = order.slice(0, Math.min(topM, row.length));
    const entries = head.map((i): [number, number] => [i, row[i]]);
    if (head.length < row.length) {
      const tail = order.slice(head.length).map((i) => row[i]);
      return { entries, tailLogmass: logSumExp(tail) };
    }
    return { entries };
  }

  embed(text: string): number[] {
    const ids = this.encode(text);
    if (ids.length === 0) {
      throw new WireError("model_failure", "cannot embed empty text");
    }
    const dim = this.vectors[0].length;
    const vector = new Array<number>(dim);
    for (let d = 0; d < dim; d += 1) {
      let total = 0;
      for (const id of ids) total += this.vectors[id][d];
      vector[d] = total / ids.length;
    }
    return vector;
  }
}
