import net from "node:net";
import readline from "node:readline";
import { Readable, Writable } from "node:stream";

import { AdapterConfig, ModelModule, generateBeams, loadModel } from "./generate.js";
import { ProtocolError, parseRequest, serializeResponse } from "./protocol.js";

/**
 * Process one request line into one response line (never throws): protocol
 * violations turn into in-band {"id", "error"} responses and the stream keeps
 * flowing.
 */
export async function handleLine(
  line: string,
  config: AdapterConfig,
  model: ModelModule | null,
): Promise<string> {
  try {
    const request = parseRequest(line);
    const beams = await generateBeams(request, config, model);
    return serializeResponse({ id: request.id, beams });
  } catch (err) {
    if (err instanceof ProtocolError) {
      return serializeResponse({ id: err.requestId, error: err.message });
    }
    const request = silentParseId(line);
    return serializeResponse({ id: request, error: (err as Error).message });
  }
}

function silentParseId(line: string): string | null {
  try {
    const raw = JSON.parse(line);
    if (typeof raw === "object" && raw !== null && typeof raw.id === "string") {
      return raw.id;
    }
  } catch {
    // fall through: nothing salvageable
  }
  return null;
}

async function prepareModel(config: AdapterConfig): Promise<ModelModule | null> {
  return config.mode === "model" && config.model ? loadModel(config.model) : null;
}

/** Serve newline-delimited requests on a stream pair, strictly in order. */
export async function serveStream(
  input: Readable,
  output: Writable,
  config: AdapterConfig,
): Promise<void> {
  const model = await prepareModel(config);
  const lines = readline.createInterface({ input, crlfDelay: Infinity });
  for await (const line of lines) {
    if (!line.trim()) continue;
    const response = await handleLine(line, config, model);
    const flushed = output.write(response + "\n");
    if (!flushed) {
      await new Promise<void>((resolve) => output.once("drain", () => resolve()));
    }
  }
}

/**
 * Serve over TCP. Each connection gets its own strictly serial
 * request/response loop; concurrent connections are independent.
 */
export async function serveTcp(
  host: string,
  port: number,
  config: AdapterConfig,
): Promise<net.Server> {
  const model = await prepareModel(config);
  const server = net.createServer((socket) => {
    socket.setEncoding("utf-8");
    let buffer = "";
    let queue: Promise<void> = Promise.resolve();
    socket.on("data", (data: string) => {
      buffer += data;
      let cut;
      while ((cut = buffer.indexOf("\n")) >= 0) {
        const line = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 1);
        if (!line.trim()) continue;
        queue = queue.then(async () => {
          const response = await handleLine(line, config, model);
          if (!socket.destroyed) socket.write(response + "\n");
        });
      }
    });
    socket.on("error", () => socket.destroy());
  });
  await new Promise<void>((resolve, reject) => {
    server.once("error", reject);
    server.listen(port, host, () => resolve());
  });
  return server;
}
