/**
 * Core export flow: read {id, text, label} JSON-lines, encode each text to
 * per-token hidden states, map labels against the circle config by exact
 * name, and write the ECM1 file plus a rejects report.
 *
 * Rows are rejected (never silently dropped) when the label is unknown,
 * the text is empty, or the encoder produces a non-finite value; each
 * rejection lands in rejects.csv with its reason. Truncation to the token
 * limit is counted and reported in the manifest.
 */

import { createHash } from "node:crypto";
import { readFileSync, writeFileSync } from "node:fs";

import { CircleConfig } from "./ecmConfig.js";
import { Ecm1Record, encodeEcm1 } from "./ecm1.js";
import { Encoder } from "./encoders.js";

export interface ExportSpec {
  encoder: Encoder;
  poolingHint: "cls" | "last" | "mean";
  maxTokens: number;
  inputPath: string;
  outputPath: string;
  circle: CircleConfig;
}

export interface ExportResult {
  written: number;
  rejected: { line: number; id: string; reason: string }[];
  truncated: number;
  dim: number;
  outputSha256: string;
}

interface InputRow {
  id: string;
  text: string;
  label: string;
}

function parseInput(path: string): InputRow[] {
  const rows: InputRow[] = [];
  const lines = readFileSync(path, "utf-8").split("\n");
  lines.forEach((line, index) => {
    if (line.trim().length === 0) return;
    let doc: any;
    try {
      doc = JSON.parse(line);
    } catch (err) {
      throw new Error(`${path}:${index + 1}: not valid JSON (${err})`);
    }
    if (typeof doc.id !== "string" || typeof doc.text !== "string" || typeof doc.label !== "string") {
      throw new Error(`${path}:${index + 1}: rows need string id, text and label fields`);
    }
    rows.push({ id: doc.id, text: doc.text, label: doc.label });
  });
  return rows;
}

export async function runExport(spec: ExportSpec): Promise<ExportResult> {
  const labelIndex = new Map(spec.circle.names.map((name, i) => [name, i]));
  const rows = parseInput(spec.inputPath);
  const records: Ecm1Record[] = [];
  const rejected: ExportResult["rejected"] = [];
  let truncated = 0;

  for (let i = 0; i < rows.length; i++) {
    const row = rows[i];
    const index = labelIndex.get(row.label);
    if (index === undefined) {
      rejected.push({ line: i + 1, id: row.id, reason: `unknown label ${row.label}` });
      continue;
    }
    if (row.text.trim().length === 0) {
      rejected.push({ line: i + 1, id: row.id, reason: "empty text" });
      continue;
    }
    const states = await spec.encoder.encode(row.text, spec.maxTokens);
    if (states.some((tokenRow) => tokenRow.some((v) => !Number.isFinite(v)))) {
      rejected.push({ line: i + 1, id: row.id, reason: "non-finite hidden state" });
      continue;
    }
    if (row.text.split(/\s+/).filter((t) => t.length > 0).length > states.length) {
      truncated += 1;
    }
    records.push({ id: row.id, labelIndex: index, tokenStates: states });
  }

  if (records.length === 0) {
    throw new Error("no rows survived export: every input row was rejected");
  }

  const blob = encodeEcm1(spec.encoder.dim, spec.circle.names, records);
  writeFileSync(spec.outputPath, blob);

  const rejectsPath = `${spec.outputPath}.rejects.csv`;
  const rejectLines = ["line,id,reason"];
  for (const r of rejected) {
    rejectLines.push(`${r.line},${r.id},${r.reason.replaceAll(",", ";")}`);
  }
  writeFileSync(rejectsPath, rejectLines.join("\n") + "\n");

  const digest = createHash("sha256").update(blob).digest("hex");
  const manifest = {
    tool: "ecmsphere-exporter",
    version: "0.1.0",
    model: spec.encoder.id,
    hidden_size: spec.encoder.dim,
    // per-token states are taken from the encoder's final hidden layer
    // output as exposed by the backend (post final layer norm for
    // transformers.js feature extraction)
    layer: "final_hidden_state",
    pooling_hint: spec.poolingHint,
    max_tokens: spec.maxTokens,
    input: spec.inputPath,
    output: spec.outputPath,
    output_sha256: digest,
    written: records.length,
    rejected: rejected.length,
    truncated,
  };
  writeFileSync(`${spec.outputPath}.manifest.json`, JSON.stringify(manifest, null, 2) + "\n");

  return {
    written: records.length,
    rejected,
    truncated,
    dim: spec.encoder.dim,
    outputSha256: digest,
  };
}
