// Wire protocol shared with the pipeline side:
//   request:  {"id": str, "title": str, "pairs": [[str, str], ...], "beam_size": int}
//   response: {"id": str, "beams": [str, ...]}   (1 <= beams.length <= beam_size)
// One response line per request line, newline-delimited UTF-8 JSON. Malformed
// requests get an in-band {"id": best-effort, "error": str} response so a bad
// record never kills a corpus-scale run.

export interface GeneratorRequest {
  id: string;
  title: string;
  pairs: [string, string][];
  beam_size: number;
}

export interface GeneratorResponse {
  id: string;
  beams: string[];
}

export interface ErrorResponse {
  id: string | null;
  error: string;
}

export class ProtocolError extends Error {
  /** Whatever id could be salvaged from the bad request, for the error echo. */
  readonly requestId: string | null;

  constructor(message: string, requestId: string | null = null) {
    super(message);
    this.requestId = requestId;
  }
}

function salvageId(value: unknown): string | null {
  if (typeof value === "object" && value !== null && !Array.isArray(value)) {
    const id = (value as Record<string, unknown>).id;
    if (typeof id === "string") return id;
  }
  return null;
}

export function parseRequest(line: string): GeneratorRequest {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`malformed JSON: ${(err as Error).message}`);
  }
  const id = salvageId(raw);
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("request must be a JSON object", id);
  }
  const obj = raw as Record<string, unknown>;
  if (typeof obj.id !== "string") {
    throw new ProtocolError("field id must be a string", id);
  }
  if (typeof obj.title !== "string") {
    throw new ProtocolError("field title must be a string", id);
  }
  const pairs = obj.pairs;
  if (
    !Array.isArray(pairs) ||
    !pairs.every(
      (p) =>
        Array.isArray(p) &&
        p.length === 2 &&
        typeof p[0] === "string" &&
        typeof p[1] === "string",
    )
  ) {
    throw new ProtocolError("field pairs must be a list of [string, string]", id);
  }
  if (typeof obj.beam_size !== "number" || !Number.isInteger(obj.beam_size) || obj.beam_size < 1) {
    throw new ProtocolError("field beam_size must be a positive integer", id);
  }
  return {
    id: obj.id,
    title: obj.title,
    pairs: pairs as [string, string][],
    beam_size: obj.beam_size,
  };
}

export function serializeResponse(response: GeneratorResponse | ErrorResponse): string {
  return JSON.stringify(response);
}
