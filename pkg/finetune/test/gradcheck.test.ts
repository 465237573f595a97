import { describe, expect, it } from "vitest";

import { ArchitectureSpec } from "../src/accounting.js";
import { LoraConfig, TARGET_PROJECTIONS } from "../src/config.js";
import { TinyLoraLM } from "../src/model.js";

const MICRO_ARCH: ArchitectureSpec = {
  name: "micro",
  vocabSize: 12,
  hiddenSize: 8,
  intermediateSize: 16,
  layers: 2,
  heads: 2,
  kvHeads: 1,
  untiedHead: true,
};

const MICRO_LORA: LoraConfig = {
  rank: 2,
  alpha: 4,
  dropout: 0, // dropout off so finite differences see a fixed graph
  targets: TARGET_PROJECTIONS,
};

describe("adapter gradients against finite differences", () => {
  it("analytic gradients match central differences on every target", () => {
    const model = new TinyLoraLM(MICRO_ARCH, MICRO_LORA, 42);
    const tokens = [1, 3, 5, 2, 7, 4, 9, 6];
    const promptLength = 3;

    model.zeroGrads();
    const res = model.forwardLoss(tokens, promptLength, true, null, true);
    expect(res.counted).toBeGreaterThan(0);
    model.backward(res.cache!);

    const eps = 1e-6;
    let checked = 0;
    for (const { pair } of model.adapterEntries()) {
      const sides: Array<[Float64Array, Float64Array]> = [
        [pair.A.data, pair.dA.data],
        [pair.B.data, pair.dB.data],
      ];
      for (const [params, grads] of sides) {
        for (let i = 0; i < Math.min(params.length, 5); i++) {
          const orig = params[i]!;
          params[i] = orig + eps;
          const up = model.forwardLoss(tokens, promptLength, true, null).loss;
          params[i] = orig - eps;
          const down = model.forwardLoss(tokens, promptLength, true, null).loss;
          params[i] = orig;
          const fd = (up - down) / (2 * eps);
          const an = grads[i]!;
          const scale = Math.max(1e-6, Math.abs(fd) + Math.abs(an));
          expect(Math.abs(fd - an) / scale).toBeLessThan(1e-4);
          checked += 1;
        }
      }
    }
    expect(checked).toBeGreaterThan(100); // both matrices of all 7 targets x 2 layers
  });

  it("loss is restricted to the response span", () => {
    const model = new TinyLoraLM(MICRO_ARCH, MICRO_LORA, 7);
    const tokens = [1, 2, 3, 4, 5, 6];
    const all = model.forwardLoss(tokens, 0, false);
    const tail = model.forwardLoss(tokens, 4, false);
    expect(all.counted).toBe(5);
    expect(tail.counted).toBe(2);
    const none = model.forwardLoss(tokens, tokens.length, false);
    expect(none.counted).toBe(0);
    expect(none.loss).toBe(0);
  });

  it("zero-initialized B leaves the base forward untouched", () => {
    const base = new TinyLoraLM(MICRO_ARCH, { ...MICRO_LORA, targets: ["query"] }, 11);
    const bare = new TinyLoraLM(
      { ...MICRO_ARCH },
      { ...MICRO_LORA, targets: ["query"] },
      11,
    );
    // corrupt A in one copy: with B = 0 the adapter contributes nothing
    for (const { pair } of bare.adapterEntries()) pair.A.data.fill(12.34);
    const tokens = [1, 2, 3, 4];
    expect(bare.forwardLoss(tokens, 1, false).loss).toBeCloseTo(
      base.forwardLoss(tokens, 1, false).loss,
      12,
    );
  });
});
