/**
 * Adapter-only instruction tuning: AdamW over the LoRA factors with a
 * cosine schedule, warmup, gradient accumulation, and global-norm
 * clipping. Validation runs at each epoch end; a checkpoint is written
 * whenever validation loss improves. Base weights never change (the test
 * suite checks their checksum).
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { ArchitectureSpec } from "./accounting.js";
import { LoraConfig, TrainConfig, validateLora, validateTrain } from "./config.js";
import { CharTokenizer, EncodedExample, encodeRecords, readDatasetJsonl, renderFallback } from "./data.js";
import { TinyLoraLM, mulberry32 } from "./model.js";

export interface StepLog {
  step: number;
  epoch: number;
  microBatch: number;
  loss: number;
  learningRate: number;
}

export interface EpochLog {
  epoch: number;
  meanTrainLoss: number;
  valLoss: number;
  improved: boolean;
}

export interface TrainResult {
  checkpointPath: string;
  stepLogs: StepLog[];
  epochLogs: EpochLog[];
  baseChecksumBefore: string;
  baseChecksumAfter: string;
  adapterParams: number;
}

/** Toy architecture dimensions for the bundled smoke model. */
export const SMOKE_ARCH: Omit<ArchitectureSpec, "vocabSize"> = {
  name: "tiny-smoke",
  hiddenSize: 24,
  intermediateSize: 48,
  layers: 2,
  heads: 2,
  kvHeads: 1,
  untiedHead: true,
};

class AdamW {
  private m: Float64Array | Float32Array;
  private v: Float64Array | Float32Array;
  private t = 0;

  constructor(
    size: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly eps = 1e-8,
    eightBitState = false,
  ) {
    // reduced-precision state stands in for 8-bit optimizer state
    this.m = eightBitState ? new Float32Array(size) : new Float64Array(size);
    this.v = eightBitState ? new Float32Array(size) : new Float64Array(size);
  }

  step(params: Float64Array, grads: Float64Array, lr: number, weightDecay: number): void {
    this.t += 1;
    const bc1 = 1 - Math.pow(this.beta1, this.t);
    const bc2 = 1 - Math.pow(this.beta2, this.t);
    for (let i = 0; i < params.length; i++) {
      const g = grads[i]!;
      this.m[i] = this.beta1 * this.m[i]! + (1 - this.beta1) * g;
      this.v[i] = this.beta2 * this.v[i]! + (1 - this.beta2) * g * g;
      const mh = this.m[i]! / bc1;
      const vh = this.v[i]! / bc2;
      params[i] = params[i]! - lr * (mh / (Math.sqrt(vh) + this.eps) + weightDecay * params[i]!);
    }
  }
}

function cosineLr(step: number, total: number, cfg: TrainConfig): number {
  const warmup = Math.max(1, Math.round(cfg.warmupRatio * total));
  if (step <= warmup) return (cfg.learningRate * step) / warmup;
  const progress = (step - warmup) / Math.max(1, total - warmup);
  return cfg.learningRate * 0.5 * (1 + Math.cos(Math.PI * Math.min(1, progress)));
}

function meanLoss(model: TinyLoraLM, examples: EncodedExample[]): number {
  let total = 0;
  let counted = 0;
  for (const ex of examples) {
    const res = model.forwardLoss(ex.tokens, ex.promptLength, false);
    if (res.counted > 0) {
      total += res.loss;
      counted += 1;
    }
  }
  return counted ? total / counted : 0;
}

export interface TrainOptions {
  trainPath: string;
  valPath: string;
  outDir: string;
  lora: LoraConfig;
  train: TrainConfig;
  modelName?: string;
}

export function train(options: TrainOptions): TrainResult {
  validateLora(options.lora);
  validateTrain(options.train);
  const cfg = options.train;

  const trainRecords = readDatasetJsonl(options.trainPath);
  const valRecords = readDatasetJsonl(options.valPath);
  for (const record of [...trainRecords, ...valRecords]) {
    if (!record.messages[2].content) {
      throw new Error(`record ${record.id}: assistant turn is empty; cannot supervise`);
    }
  }

  const corpus = [...trainRecords, ...valRecords].map((r) => renderFallback(r).fullText);
  const tokenizer = new CharTokenizer(corpus);
  const arch: ArchitectureSpec = { ...SMOKE_ARCH, vocabSize: tokenizer.vocabSize };
  const model = new TinyLoraLM(arch, options.lora, cfg.seed + 101);
  if (cfg.quantizeBase4bit) model.quantizeBase4bit();
  const baseChecksumBefore = model.baseChecksum();

  const trainExamples = encodeRecords(trainRecords, tokenizer, cfg.maxSequenceLength);
  const valExamples = encodeRecords(valRecords, tokenizer, cfg.maxSequenceLength);

  const microPerEpoch = Math.ceil(trainExamples.length / cfg.batchSize);
  const stepsPerEpoch = Math.ceil(microPerEpoch / cfg.gradAccumulation);
  const totalSteps = stepsPerEpoch * cfg.epochs;

  const adapters = model.adapterEntries();
  const optimizers = adapters.map(
    ({ pair }) =>
      [
        new AdamW(pair.A.data.length, 0.9, 0.999, 1e-8, cfg.eightBitOptimizerState),
        new AdamW(pair.B.data.length, 0.9, 0.999, 1e-8, cfg.eightBitOptimizerState),
      ] as const,
  );

  fs.mkdirSync(options.outDir, { recursive: true });
  const checkpointPath = path.join(options.outDir, "adapter_checkpoint.json");
  const lossLogPath = path.join(options.outDir, "loss_log.jsonl");
  const logStream: string[] = [];

  const shuffleRng = mulberry32(cfg.seed + 7);
  const dropoutRng = mulberry32(cfg.seed + 13);
  const stepLogs: StepLog[] = [];
  const epochLogs: EpochLog[] = [];
  let bestVal = Infinity;
  let optimizerStep = 0;
  let microSinceStep = 0;

  const applyStep = () => {
    optimizerStep += 1;
    const lr = cosineLr(optimizerStep, totalSteps, cfg);
    // average accumulated grads, clip by global norm, then AdamW
    let sq = 0;
    for (const { pair } of adapters) {
      for (let i = 0; i < pair.dA.data.length; i++) {
        pair.dA.data[i] = pair.dA.data[i]! / microSinceStep;
        sq += pair.dA.data[i]! * pair.dA.data[i]!;
      }
      for (let i = 0; i < pair.dB.data.length; i++) {
        pair.dB.data[i] = pair.dB.data[i]! / microSinceStep;
        sq += pair.dB.data[i]! * pair.dB.data[i]!;
      }
    }
    const norm = Math.sqrt(sq);
    const scale = norm > cfg.gradClip ? cfg.gradClip / norm : 1;
    adapters.forEach(({ pair }, idx) => {
      if (scale !== 1) {
        for (let i = 0; i < pair.dA.data.length; i++) pair.dA.data[i] = pair.dA.data[i]! * scale;
        for (let i = 0; i < pair.dB.data.length; i++) pair.dB.data[i] = pair.dB.data[i]! * scale;
      }
      const [optA, optB] = optimizers[idx]!;
      optA.step(pair.A.data, pair.dA.data, lr, cfg.weightDecay);
      optB.step(pair.B.data, pair.dB.data, lr, cfg.weightDecay);
    });
    model.zeroGrads();
    microSinceStep = 0;
    return lr;
  };

  for (let epoch = 1; epoch <= cfg.epochs; epoch++) {
    const order = trainExamples.map((_, i) => i);
    for (let i = order.length - 1; i > 0; i--) {
      const j = Math.floor(shuffleRng() * (i + 1));
      [order[i], order[j]] = [order[j]!, order[i]!];
    }

    let epochLossSum = 0;
    let epochLossCount = 0;
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const micro = order.slice(start, start + cfg.batchSize).map((i) => trainExamples[i]!);
      let microLoss = 0;
      let contributing = 0;
      for (const ex of micro) {
        const res = model.forwardLoss(ex.tokens, ex.promptLength, true, dropoutRng, true);
        if (res.counted === 0 || !res.cache) continue;
        model.backward(res.cache);
        microLoss += res.loss;
        contributing += 1;
      }
      if (contributing === 0) continue;
      microLoss /= contributing;
      epochLossSum += microLoss;
      epochLossCount += 1;
      microSinceStep += 1;

      let lrNow = cosineLr(optimizerStep + 1, totalSteps, cfg);
      if (microSinceStep >= cfg.gradAccumulation) lrNow = applyStep();

      const log: StepLog = {
        step: optimizerStep,
        epoch,
        microBatch: epochLossCount,
        loss: microLoss,
        learningRate: lrNow,
      };
      stepLogs.push(log);
      logStream.push(JSON.stringify(log));
    }
    if (microSinceStep > 0) applyStep(); // flush a partial accumulation window

    const valLoss = meanLoss(model, valExamples);
    const meanTrainLoss = epochLossCount ? epochLossSum / epochLossCount : 0;
    const improved = valLoss < bestVal;
    if (improved) {
      bestVal = valLoss;
      model.save(checkpointPath, tokenizer);
    }
    const epochLog: EpochLog = { epoch, meanTrainLoss, valLoss, improved };
    epochLogs.push(epochLog);
    logStream.push(JSON.stringify({ ...epochLog, kind: "epoch" }));
  }

  if (!fs.existsSync(checkpointPath)) model.save(checkpointPath, tokenizer);
  fs.writeFileSync(lossLogPath, logStream.join("\n") + "\n");

  return {
    checkpointPath,
    stepLogs,
    epochLogs,
    baseChecksumBefore,
    baseChecksumAfter: model.baseChecksum(),
    adapterParams: model.adapterParamCount(),
  };
}
