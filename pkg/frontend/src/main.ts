// CLI: genadapter --mode {echo|template|model} [--model path.js]
//                 [--addr host:port] [--max-beams N]
// Without --addr the adapter speaks the protocol on stdin/stdout; with it,
// it listens on the given TCP address.

import { AdapterConfig, Mode } from "./generate.js";
import { serveStream, serveTcp } from "./server.js";

function usage(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.stderr.write(
    "usage: genadapter --mode {echo|template|model} [--model path.js] " +
      "[--addr host:port] [--max-beams N]\n",
  );
  process.exit(1);
}

export function parseArgs(argv: string[]): { config: AdapterConfig; addr: string | null } {
  let mode: Mode | null = null;
  let model: string | undefined;
  let addr: string | null = null;
  let maxBeams = 10;
  for (let i = 0; i < argv.length; i += 1) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--mode":
        if (value !== "echo" && value !== "template" && value !== "model") {
          usage(`unknown mode ${value}`);
        }
        mode = value;
        i += 1;
        break;
      case "--model":
        if (value === undefined) usage("--model needs a path");
        model = value;
        i += 1;
        break;
      case "--addr":
        if (value === undefined) usage("--addr needs host:port");
        addr = value;
        i += 1;
        break;
      case "--max-beams": {
        const parsed = Number(value);
        if (!Number.isInteger(parsed) || parsed < 1) usage("--max-beams must be >= 1");
        maxBeams = parsed;
        i += 1;
        break;
      }
      default:
        usage(`unknown flag ${flag}`);
    }
  }
  if (mode === null) usage("--mode is required");
  if (mode === "model" && !model) usage("--mode model needs --model");
  return { config: { mode, model, maxBeams }, addr };
}

async function main(): Promise<void> {
  const { config, addr } = parseArgs(process.argv.slice(2));
  if (addr) {
    const cut = addr.lastIndexOf(":");
    const host = addr.slice(0, cut);
    const port = Number(addr.slice(cut + 1));
    if (!host || !Number.isInteger(port)) usage("--addr must be host:port");
    const server = await serveTcp(host, port, config);
    process.stderr.write(`genadapter listening on ${host}:${port}\n`);
    await new Promise<void>((resolve) => server.once("close", () => resolve()));
  } else {
    await serveStream(process.stdin, process.stdout, config);
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;

if (invokedDirectly) {
  main().catch((err) => {
    process.stderr.write(`fatal: ${(err as Error).message}\n`);
    process.exit(1);
  });
}
