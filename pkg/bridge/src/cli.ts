#!/usr/bin/env node
/**
 * Model-server entry point.
 *
 * Flags: --model <table.json> (required), --embedder {mock,none},
 * --transport {stdio,tcp}, --port <n>. Stdio serves until stdin
 * closes; tcp announces "listening on <port>" on stderr, serves one
 * connection, and exits.
 */

import { MockModel, loadModelTable } from "./mock";
import { serveLines, serveTcp } from "./ndjson";
import { Session } from "./server";

interface CliArgs {
  model: string;
  embedder: "mock" | "none";
  transport: "stdio" | "tcp";
  port: number;
}

export function parseArgs(argv: string[]): CliArgs {
  const args: Partial<CliArgs> = { embedder: "mock", transport: "stdio", port: 0 };
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`flag ${flag} needs a value`);
    }
    switch (flag) {
      case "--model":
        args.model = value;
        break;
      case "--embedder":
        if (value !== "mock" && value !== "none") {
          throw new Error(`unknown embedder ${value}; choose mock or none`);
        }
        args.embedder = value;
        break;
      case "--transport":
        if (value !== "stdio" && value !== "tcp") {
          throw new Error(`unknown transport ${value}; choose stdio or tcp`);
        }
        args.transport = value;
        break;
      case "--port": {
        const port = Number(value);
        if (!Number.isInteger(port) || port < 0 || port > 65535) {
          throw new Error(`invalid port ${value}`);
        }
        args.port = port;
        break;
      }
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.model) {
    throw new Error("--model <table.json> is required");
  }
  return args as CliArgs;
}

async function main(): Promise<number> {
  let args: CliArgs;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (exc) {
    process.stderr.write(`usage error: ${exc instanceof Error ? exc.message : exc}\n`);
    return 1;
  }
  let model: MockModel;
  try {
    model = new MockModel(loadModelTable(args.model));
  } catch (exc) {
    process.stderr.write(`cannot load model table: ${exc instanceof Error ? exc.message : exc}\n`);
    return 1;
  }
  const makeSession = () => new Session(model, { embedder: args.embedder !== "none" });
  if (args.transport === "stdio") {
    await serveLines(makeSession(), process.stdin, process.stdout);
    return 0;
  }
  const handle = await serveTcp(makeSession, args.port);
  process.stderr.write(`listening on ${handle.port}\n`);
  await handle.done;
  return 0;
}

if (require.main === module) {
  main().then((code) => {
    process.exitCode = code;
  });
}
