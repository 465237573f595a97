import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { describe, expect, it } from "vitest";

import {
  ConfigError,
  DEFAULT_LORA,
  DEFAULT_TRAIN,
  TARGET_PROJECTIONS,
  loadConfigFile,
  parseTomlSubset,
  validateLora,
  validateTrain,
} from "../src/config.js";

function tmpFile(name: string, content: string): string {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "ft-config-"));
  const p = path.join(dir, name);
  fs.writeFileSync(p, content);
  return p;
}

describe("adapter config", () => {
  it("defaults match the published recipe", () => {
    expect(DEFAULT_LORA.rank).toBe(16);
    expect(DEFAULT_LORA.alpha).toBe(32);
    expect(DEFAULT_LORA.dropout).toBe(0.05);
    expect([...DEFAULT_LORA.targets]).toEqual([
      "query", "key", "value", "output", "gate", "up", "down",
    ]);
    expect(TARGET_PROJECTIONS).toHaveLength(7);
  });

  it("rejects rank zero", () => {
    expect(() => validateLora({ ...DEFAULT_LORA, rank: 0 })).toThrow(ConfigError);
  });

  it("rejects dropout of one and negative alpha", () => {
    expect(() => validateLora({ ...DEFAULT_LORA, dropout: 1 })).toThrow(ConfigError);
    expect(() => validateLora({ ...DEFAULT_LORA, alpha: 0 })).toThrow(ConfigError);
  });
});

describe("trainer config", () => {
  it("defaults match the published recipe", () => {
    expect(DEFAULT_TRAIN.learningRate).toBeCloseTo(2e-4, 10);
    expect(DEFAULT_TRAIN.schedule).toBe("cosine");
    expect(DEFAULT_TRAIN.warmupRatio).toBeCloseTo(0.03, 10);
    expect(DEFAULT_TRAIN.epochs).toBe(3);
    expect(DEFAULT_TRAIN.batchSize).toBe(4);
    expect(DEFAULT_TRAIN.gradAccumulation).toBe(4);
    expect(DEFAULT_TRAIN.gradClip).toBeCloseTo(0.3, 10);
    expect(DEFAULT_TRAIN.weightDecay).toBeCloseTo(0.001, 10);
  });

  it("rejects out-of-range clip and warmup", () => {
    expect(() => validateTrain({ ...DEFAULT_TRAIN, gradClip: 0 })).toThrow(ConfigError);
    expect(() => validateTrain({ ...DEFAULT_TRAIN, gradClip: 1.5 })).toThrow(ConfigError);
    expect(() => validateTrain({ ...DEFAULT_TRAIN, warmupRatio: 0 })).toThrow(ConfigError);
  });
});

describe("config file loading", () => {
  it("parses the TOML subset", () => {
    const flat = parseTomlSubset(
      '# comment\n[lora]\nrank = 8\nalpha = 16.0\ntargets = ["query", "value"]\n' +
        "[train]\nepochs = 2\nquantize_base_4bit = true\n",
    );
    expect(flat.rank).toBe(8);
    expect(flat.alpha).toBe(16);
    expect(flat.targets).toEqual(["query", "value"]);
    expect(flat.quantize_base_4bit).toBe(true);
  });

  it("loads TOML mirroring the config field names", () => {
    const p = tmpFile("run.toml", [
      "rank = 4",
      "alpha = 8",
      "dropout = 0.1",
      'targets = ["query", "key"]',
      "learning_rate = 0.0001",
      "epochs = 1",
      "seed = 5",
    ].join("\n"));
    const { lora, train } = loadConfigFile(p);
    expect(lora.rank).toBe(4);
    expect(lora.targets).toEqual(["query", "key"]);
    expect(train.learningRate).toBeCloseTo(1e-4, 12);
    expect(train.epochs).toBe(1);
    expect(train.seed).toBe(5);
    expect(train.batchSize).toBe(DEFAULT_TRAIN.batchSize); // untouched default
  });

  it("loads nested JSON configs", () => {
    const p = tmpFile("run.json", JSON.stringify({
      lora: { rank: 2, alpha: 4 },
      train: { epochs: 1, gradClip: 0.2 },
    }));
    const { lora, train } = loadConfigFile(p);
    expect(lora.rank).toBe(2);
    expect(train.gradClip).toBeCloseTo(0.2, 12);
  });

  it("rejects unknown keys and invalid values", () => {
    expect(() => loadConfigFile(tmpFile("bad.toml", "wat = 3\n"))).toThrow(ConfigError);
    expect(() => loadConfigFile(tmpFile("bad2.toml", "rank = 0\n"))).toThrow(ConfigError);
  });
});

describe("dataset reading", () => {
  it("rejects malformed records with the offending location", async () => {
    const { readDatasetJsonl, DataError } = await import("../src/data.js");
    const good = JSON.stringify({
      id: "r1",
      messages: [
        { role: "system", content: "s" },
        { role: "user", content: "u" },
        { role: "assistant", content: "a" },
      ],
      meta: { persona_id: "p", domain: "finance", question_id: "q", question_type: "open" },
    });
    const p = tmpFile("data.jsonl", good + "\n" + '{"id": "r2", "messages": []}' + "\n");
    expect(() => readDatasetJsonl(p)).toThrow(DataError);
    expect(() => readDatasetJsonl(p)).toThrow(/:2/);
  });

  it("round-trips the fallback rendering format", async () => {
    const { readDatasetJsonl, renderFallback } = await import("../src/data.js");
    const good = JSON.stringify({
      id: "r1",
      messages: [
        { role: "system", content: "sys" },
        { role: "user", content: "usr" },
        { role: "assistant", content: "ans" },
      ],
      meta: { persona_id: "p", domain: "finance", question_id: "q", question_type: "open" },
    });
    const p = tmpFile("one.jsonl", good + "\n");
    const [record] = readDatasetJsonl(p);
    const { inputText, fullText } = renderFallback(record!);
    expect(fullText).toBe("<|system|>\nsys</s>\n<|user|>\nusr</s>\n<|assistant|>\nans</s>");
    expect(fullText.startsWith(inputText)).toBe(true);
  });
});
