import { GeneratorRequest, ProtocolError } from "./protocol.js";

export type Mode = "echo" | "template" | "model";

export interface AdapterConfig {
  mode: Mode;
  /** Path of a JS module exporting generate(request) (mode=model only). */
  model?: string;
  maxBeams: number;
}

const TITLE_ATTR = "[title]";

/**
 * Mirror of the pipeline's built-in template generator. Must stay
 * byte-identical: one "the {attr} of {title} is {value}." sentence per
 * non-title pair, joined by single spaces, whole output lowercased; a record
 * with no value pairs becomes "{title}.".
 */
export function templateText(title: string, pairs: [string, string][]): string {
  const values = pairs.filter(([attr]) => attr !== TITLE_ATTR);
  const text = values.length
    ? values.map(([attr, value]) => `the ${attr} of ${title} is ${value}.`).join(" ")
    : `${title}.`;
  return text.toLowerCase();
}

/** The one-way "<H> attr <T> value" serialization of a record. */
export function echoText(pairs: [string, string][]): string {
  return pairs.map(([attr, value]) => `<H> ${attr} <T> ${value}`).join(" ");
}

export interface ModelModule {
  generate(request: GeneratorRequest): string[] | Promise<string[]>;
}

export async function loadModel(path: string): Promise<ModelModule> {
  const url = new URL(path, `file://${process.cwd()}/`).href;
  const mod = await import(url);
  const generate = mod.generate ?? mod.default?.generate;
  if (typeof generate !== "function") {
    throw new Error(`model module ${path} does not export generate()`);
  }
  return { generate };
}

export async function generateBeams(
  request: GeneratorRequest,
  config: AdapterConfig,
  model: ModelModule | null,
): Promise<string[]> {
  let beams: string[];
  switch (config.mode) {
    case "echo":
      beams = [echoText(request.pairs)];
      break;
    case "template":
      beams = [templateText(request.title, request.pairs)];
      break;
    case "model": {
      if (!model) throw new ProtocolError("no model loaded", request.id);
      const produced = await model.generate(request);
      if (!Array.isArray(produced) || !produced.every((b) => typeof b === "string")) {
        throw new ProtocolError("model returned a non string-list", request.id);
      }
      beams = produced;
      break;
    }
  }
  const limit = Math.min(request.beam_size, config.maxBeams);
  beams = beams.slice(0, limit);
  if (beams.length === 0) {
    throw new ProtocolError("no beams produced", request.id);
  }
  return beams;
}
