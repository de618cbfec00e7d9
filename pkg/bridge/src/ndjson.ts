/**
 * Newline-delimited JSON framing over byte streams.
 */

import { createInterface } from "readline";
import { Server, createServer } from "net";

import { Session } from "./server";

/** Answer every request line on the stream pair; resolves at EOF. */
export function serveLines(
  session: Session,
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
): Promise<void> {
  return new Promise((resolve) => {
    const lines = createInterface({ input, terminal: false });
    lines.on("line", (line) => {
      if (line.trim()) {
        output.write(session.respond(line) + "\n");
      }
    });
    lines.on("close", resolve);
  });
}

export interface TcpHandle {
  port: number;
  server: Server;
  /** Resolves after the single accepted connection ends. */
  done: Promise<void>;
}

/** Serve exactly one TCP connection, then stop listening. */
export function serveTcp(makeSession: () => Session, port: number): Promise<TcpHandle> {
  return new Promise((resolveHandle) => {
    const server = createServer();
    const done = new Promise<void>((resolveDone) => {
      server.on("connection", (socket) => {
        server.close();
        serveLines(makeSession(), socket, socket).then(() => {
          socket.end();
          resolveDone();
        });
      });
    });
    server.listen(port, "127.0.0.1", () => {
      const address = server.address();
      const bound = typeof address === "object" && address !== null ? address.port : port;
      resolveHandle({ port: bound, server, done });
    });
  });
}
