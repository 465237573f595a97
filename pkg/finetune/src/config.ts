/**
 * Adapter and trainer configuration.
 *
 * Field names mirror the config file keys one-to-one; a single flat
 * TOML-or-JSON file configures a run (see `loadConfigFile`).
 */

import * as fs from "node:fs";

/** The seven projection families that receive low-rank adapters. */
export const TARGET_PROJECTIONS = [
  "query",
  "key",
  "value",
  "output",
  "gate",
  "up",
  "down",
] as const;

export type TargetProjection = (typeof TARGET_PROJECTIONS)[number];

export interface LoraConfig {
  /** Rank of the A/B factorization; the update is deltaW = B x A. */
  rank: number;
  /** Scaling alpha; updates enter the forward pass as (alpha/rank) * BA. */
  alpha: number;
  /** Dropout on adapter inputs during training. */
  dropout: number;
  targets: readonly TargetProjection[];
}

export interface TrainConfig {
  learningRate: number;
  schedule: "cosine";
  warmupRatio: number;
  epochs: number;
  batchSize: number;
  gradAccumulation: number;
  gradClip: number;
  weightDecay: number;
  /** Memory-efficient optimizer state flag; state is kept in reduced
   * precision when true (mirrors 8-bit-state optimizers). */
  eightBitOptimizerState: boolean;
  /** Quantize frozen base weights to 4-bit levels at load. */
  quantizeBase4bit: boolean;
  seed: number;
  maxSequenceLength: number;
}

export const DEFAULT_LORA: LoraConfig = {
  rank: 16,
  alpha: 32,
  dropout: 0.05,
  targets: TARGET_PROJECTIONS,
};

export const DEFAULT_TRAIN: TrainConfig = {
  learningRate: 2e-4,
  schedule: "cosine",
  warmupRatio: 0.03,
  epochs: 3,
  batchSize: 4,
  gradAccumulation: 4,
  gradClip: 0.3,
  weightDecay: 0.001,
  eightBitOptimizerState: true,
  quantizeBase4bit: false,
  seed: 0,
  maxSequenceLength: 120,
};

export class ConfigError extends Error {}

export function validateLora(cfg: LoraConfig): void {
  if (!Number.isInteger(cfg.rank) || cfg.rank < 1) {
    throw new ConfigError(`rank must be an integer >= 1, got ${cfg.rank}`);
  }
  if (!(cfg.alpha > 0)) {
    throw new ConfigError(`alpha must be positive, got ${cfg.alpha}`);
  }
  if (!(cfg.dropout >= 0 && cfg.dropout < 1)) {
    throw new ConfigError(`dropout must lie in [0, 1), got ${cfg.dropout}`);
  }
  if (cfg.targets.length === 0) {
    throw new ConfigError("at least one target projection is required");
  }
  for (const t of cfg.targets) {
    if (!TARGET_PROJECTIONS.includes(t)) {
      throw new ConfigError(`unknown target projection '${t}'`);
    }
  }
}

export function validateTrain(cfg: TrainConfig): void {
  const positive: Array<[string, number]> = [
    ["learningRate", cfg.learningRate],
    ["epochs", cfg.epochs],
    ["batchSize", cfg.batchSize],
    ["gradAccumulation", cfg.gradAccumulation],
    ["weightDecay", cfg.weightDecay],
    ["maxSequenceLength", cfg.maxSequenceLength],
  ];
  for (const [name, value] of positive) {
    if (!(value > 0)) throw new ConfigError(`${name} must be positive, got ${value}`);
  }
  if (!(cfg.gradClip > 0 && cfg.gradClip <= 1)) {
    throw new ConfigError(`gradClip must lie in (0, 1], got ${cfg.gradClip}`);
  }
  if (!(cfg.warmupRatio > 0 && cfg.warmupRatio <= 1)) {
    throw new ConfigError(`warmupRatio must lie in (0, 1], got ${cfg.warmupRatio}`);
  }
  if (cfg.schedule !== "cosine") {
    throw new ConfigError(`unsupported schedule '${cfg.schedule}'`);
  }
}

type Scalar = string | number | boolean;

/** Parse the flat TOML subset used for run configs: `key = value` pairs,
 * optional `[section]` headers (flattened away), strings, numbers,
 * booleans, arrays of strings, and `#` comments. */
export function parseTomlSubset(text: string): Record<string, Scalar | string[]> {
  const out: Record<string, Scalar | string[]> = {};
  for (const [index, rawLine] of text.split(/\r?\n/).entries()) {
    let line = rawLine.trim();
    if (!line || line.startsWith("#")) continue;
    if (!line.includes('"') && line.includes("#")) line = line.split("#", 1)[0]!.trim();
    if (/^\[[A-Za-z0-9_.-]+\]$/.test(line)) continue; // sections are cosmetic
    const m = /^([A-Za-z0-9_]+)\s*=\s*(.+)$/.exec(line);
    if (!m) throw new ConfigError(`config line ${index + 1}: cannot parse '${line}'`);
    out[m[1]!] = parseValue(m[2]!.trim(), index + 1);
  }
  return out;
}

function parseValue(raw: string, line: number): Scalar | string[] {
  if (raw.startsWith('"') && raw.endsWith('"')) return raw.slice(1, -1);
  if (raw === "true" || raw === "false") return raw === "true";
  if (raw.startsWith("[") && raw.endsWith("]")) {
    const inner = raw.slice(1, -1).trim();
    if (!inner) return [];
    return inner.split(",").map((part) => {
      const v = parseValue(part.trim(), line);
      if (typeof v !== "string") throw new ConfigError(`line ${line}: only string arrays are supported`);
      return v;
    });
  }
  const n = Number(raw);
  if (!Number.isNaN(n)) return n;
  throw new ConfigError(`config line ${line}: cannot parse value '${raw}'`);
}

const LORA_KEYS: Record<string, keyof LoraConfig> = {
  rank: "rank",
  alpha: "alpha",
  dropout: "dropout",
  targets: "targets",
};

const TRAIN_KEYS: Record<string, keyof TrainConfig> = {
  learning_rate: "learningRate",
  learningRate: "learningRate",
  schedule: "schedule",
  warmup_ratio: "warmupRatio",
  warmupRatio: "warmupRatio",
  epochs: "epochs",
  batch_size: "batchSize",
  batchSize: "batchSize",
  grad_accumulation: "gradAccumulation",
  gradAccumulation: "gradAccumulation",
  grad_clip: "gradClip",
  gradClip: "gradClip",
  weight_decay: "weightDecay",
  weightDecay: "weightDecay",
  eight_bit_optimizer_state: "eightBitOptimizerState",
  eightBitOptimizerState: "eightBitOptimizerState",
  quantize_base_4bit: "quantizeBase4bit",
  quantizeBase4bit: "quantizeBase4bit",
  seed: "seed",
  max_sequence_length: "maxSequenceLength",
  maxSequenceLength: "maxSequenceLength",
};

export interface RunConfig {
  lora: LoraConfig;
  train: TrainConfig;
}

/** Load one TOML-or-JSON config file; unknown keys are rejected so typos
 * cannot silently fall back to defaults. */
export function loadConfigFile(path: string): RunConfig {
  const text = fs.readFileSync(path, "utf-8");
  const flat: Record<string, unknown> = text.trimStart().startsWith("{")
    ? flattenJson(JSON.parse(text))
    : parseTomlSubset(text);

  const lora: LoraConfig = { ...DEFAULT_LORA };
  const train: TrainConfig = { ...DEFAULT_TRAIN };
  for (const [key, value] of Object.entries(flat)) {
    if (key in LORA_KEYS) {
      (lora as unknown as Record<string, unknown>)[LORA_KEYS[key]!] = value;
    } else if (key in TRAIN_KEYS) {
      (train as unknown as Record<string, unknown>)[TRAIN_KEYS[key]!] = value;
    } else {
      throw new ConfigError(`unknown config key '${key}'`);
    }
  }
  validateLora(lora);
  validateTrain(train);
  return { lora, train };
}

function flattenJson(obj: Record<string, unknown>): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  for (const [key, value] of Object.entries(obj)) {
    if (value !== null && typeof value === "object" && !Array.isArray(value)) {
      Object.assign(out, flattenJson(value as Record<string, unknown>));
    } else {
      out[key] = value;
    }
  }
  return out;
}
