#!/usr/bin/env node
/**
 * ecmsphere-export: serialize encoder token states into an ECM1 dataset.
 *
 * Usage:
 *   ecmsphere-export --model hash-32 --in texts.jsonl --out data.ecm1
 *                    [--ecm circle.json] [--max-len 64] [--pooling mean]
 *
 * Exit codes: 0 success, 2 usage/config error or empty output.
 */

import { defaultCircleConfig, loadCircleConfig } from "./ecmConfig.js";
import { loadEncoder } from "./encoders.js";
import { runExport } from "./exporter.js";

interface Args {
  model: string;
  in: string;
  out: string;
  ecm?: string;
  maxLen: number;
  pooling: "cls" | "last" | "mean";
}

function parseArgs(argv: string[]): Args {
  const values = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument list near ${key}`);
    }
    values.set(key.slice(2), argv[i + 1]);
  }
  for (const required of ["model", "in", "out"]) {
    if (!values.has(required)) {
      throw new Error(`missing required flag --${required}`);
    }
  }
  const pooling = (values.get("pooling") ?? "mean") as Args["pooling"];
  if (!["cls", "last", "mean"].includes(pooling)) {
    throw new Error(`--pooling must be cls, last or mean, got ${pooling}`);
  }
  const maxLen = parseInt(values.get("max-len") ?? "64", 10);
  if (!(maxLen >= 1)) {
    throw new Error("--max-len must be a positive integer");
  }
  return {
    model: values.get("model")!,
    in: values.get("in")!,
    out: values.get("out")!,
    ecm: values.get("ecm"),
    maxLen,
    pooling,
  };
}

async function main(): Promise<number> {
  let args: Args;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
  try {
    const encoder = await loadEncoder(args.model);
    const circle = args.ecm ? loadCircleConfig(args.ecm) : defaultCircleConfig();
    const result = await runExport({
      encoder,
      poolingHint: args.pooling,
      maxTokens: args.maxLen,
      inputPath: args.in,
      outputPath: args.out,
      circle,
    });
    console.log(
      `wrote ${args.out}: ${result.written} records (d=${result.dim}), ` +
        `${result.rejected.length} rejected, ${result.truncated} truncated`,
    );
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 2;
  }
}

main().then((code) => {
  process.exitCode = code;
});
