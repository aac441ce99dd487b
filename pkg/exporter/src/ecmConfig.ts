/** Circle-layout config loading (the same JSON schema the trainer reads). */

import { readFileSync } from "node:fs";

export interface CircleConfig {
  /** Label names in index order. */
  names: string[];
}

interface RawLabel {
  name: string;
  slot: number;
  polarity: string;
}

const DEFAULT_NAMES = [
  "love", "joy", "excitement", "surprise", "anger", "fear",
  "disgust", "sadness", "boredom", "calmness", "relief", "trust",
];

export function defaultCircleConfig(): CircleConfig {
  return { names: [...DEFAULT_NAMES] };
}

export function loadCircleConfig(path: string): CircleConfig {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  if (!Array.isArray(doc.labels)) {
    throw new Error(`${path}: config must contain a 'labels' list`);
  }
  const labels = doc.labels as RawLabel[];
  const slots = new Set(labels.map((l) => l.slot));
  if (slots.size !== labels.length) {
    throw new Error(`${path}: label slots collide`);
  }
  return { names: labels.map((l) => l.name) };
}
