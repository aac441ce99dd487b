/**
 * Token-state encoders.
 *
 * An encoder turns one text into per-token final-layer hidden states
 * (T x d). Two implementations:
 *
 *  - `hash-<d>`: a dependency-free deterministic encoder that derives each
 *    token's state from SHA-256 of (token, position). No semantics, but
 *    byte-stable across runs and platforms, which makes it the fixture
 *    encoder for tests and offline environments.
 *  - any other id: treated as a transformers.js model name and loaded via
 *    a dynamic import of @xenova/transformers, requesting token-level
 *    (unpooled) features from the feature-extraction pipeline.
 */

import { createHash } from "node:crypto";

export interface Encoder {
  readonly id: string;
  readonly dim: number;
  /** Per-token final-layer states for one text, truncated to maxTokens. */
  encode(text: string, maxTokens: number): Promise<number[][]>;
}

class HashEncoder implements Encoder {
  constructor(readonly dim: number) {}

  get id(): string {
    return `hash-${this.dim}`;
  }

  async encode(text: string, maxTokens: number): Promise<number[][]> {
    const tokens = text.split(/\s+/).filter((t) => t.length > 0).slice(0, maxTokens);
    if (tokens.length === 0) {
      throw new Error("cannot encode an empty text");
    }
    return tokens.map((token, position) => this.tokenState(token, position));
  }

  private tokenState(token: string, position: number): number[] {
    const values: number[] = [];
    let counter = 0;
    while (values.length < this.dim) {
      const digest = createHash("sha256")
        .update(`${this.id}:${position}:${token}:${counter}`)
        .digest();
      for (let i = 0; i + 4 <= digest.length && values.length < this.dim; i += 4) {
        // map 32 bits to (-1, 1)
        values.push((digest.readUInt32LE(i) / 0xffffffff) * 2 - 1);
      }
      counter += 1;
    }
    return values;
  }
}

class TransformersEncoder implements Encoder {
  private constructor(
    readonly id: string,
    readonly dim: number,
    private readonly extractor: (text: string) => Promise<{ dims: number[]; data: Float32Array }>,
  ) {}

  static async load(modelId: string): Promise<TransformersEncoder> {
    let transformers: any;
    try {
      transformers = await import("@xenova/transformers");
    } catch {
      throw new Error(
        `model ${modelId} needs the optional dependency @xenova/transformers; ` +
          "install it, or use the built-in hash-<d> encoder",
      );
    }
    const pipe = await transformers.pipeline("feature-extraction", modelId);
    const extractor = async (text: string) => pipe(text, { pooling: "none" });
    const probe = await extractor("probe");
    const dim = probe.dims[probe.dims.length - 1];
    return new TransformersEncoder(modelId, dim, extractor);
  }

  async encode(text: string, maxTokens: number): Promise<number[][]> {
    const out = await this.extractor(text);
    const [tokens, dim] = [out.dims[out.dims.length - 2], out.dims[out.dims.length - 1]];
    const rows: number[][] = [];
    for (let t = 0; t < Math.min(tokens, maxTokens); t++) {
      rows.push(Array.from(out.data.slice(t * dim, (t + 1) * dim)));
    }
    return rows;
  }
}

const HASH_PATTERN = /^hash-(\d+)$/;

export async function loadEncoder(modelId: string): Promise<Encoder> {
  const match = HASH_PATTERN.exec(modelId);
  if (match) {
    const dim = parseInt(match[1], 10);
    if (dim < 1) {
      throw new Error(`hash encoder dimension must be positive, got ${dim}`);
    }
    return new HashEncoder(dim);
  }
  return TransformersEncoder.load(modelId);
}
