/**
 * Parameter accounting: base model size vs trainable adapter size.
 *
 * Works from architecture dimensions alone, so the efficiency of an
 * adapter configuration can be checked for any target model without
 * loading weights.
 */

import { LoraConfig, TargetProjection } from "./config.js";

export interface ArchitectureSpec {
  name: string;
  vocabSize: number;
  hiddenSize: number;
  intermediateSize: number;
  layers: number;
  heads: number;
  kvHeads: number;
  /** Untied output head (separate lm_head matrix). */
  untiedHead: boolean;
}

/** A TinyLlama-class 1.1B reference architecture. */
export const REFERENCE_1B: ArchitectureSpec = {
  name: "tinyllama-1.1b-class",
  vocabSize: 32000,
  hiddenSize: 2048,
  intermediateSize: 5632,
  layers: 22,
  heads: 32,
  kvHeads: 4,
  untiedHead: true,
};

/** (outputDim, inputDim) of each adapter-bearing projection. */
export function projectionShape(
  arch: ArchitectureSpec,
  target: TargetProjection,
): [number, number] {
  const headDim = arch.hiddenSize / arch.heads;
  const kvDim = headDim * arch.kvHeads;
  switch (target) {
    case "query":
      return [arch.hiddenSize, arch.hiddenSize];
    case "key":
      return [kvDim, arch.hiddenSize];
    case "value":
      return [kvDim, arch.hiddenSize];
    case "output":
      return [arch.hiddenSize, arch.hiddenSize];
    case "gate":
      return [arch.intermediateSize, arch.hiddenSize];
    case "up":
      return [arch.intermediateSize, arch.hiddenSize];
    case "down":
      return [arch.hiddenSize, arch.intermediateSize];
  }
}

/** Dense parameter count of the base transformer (weights + norms). */
export function baseParamCount(arch: ArchitectureSpec): number {
  const headDim = arch.hiddenSize / arch.heads;
  const kvDim = headDim * arch.kvHeads;
  const attention =
    2 * arch.hiddenSize * arch.hiddenSize + // query, output
    2 * kvDim * arch.hiddenSize; // key, value
  const mlp = 3 * arch.hiddenSize * arch.intermediateSize; // gate, up, down
  const norms = 2 * arch.hiddenSize; // two RMSNorm gains per layer
  const perLayer = attention + mlp + norms;
  const embeddings = arch.vocabSize * arch.hiddenSize;
  const head = arch.untiedHead ? arch.vocabSize * arch.hiddenSize : 0;
  const finalNorm = arch.hiddenSize;
  return arch.layers * perLayer + embeddings + head + finalNorm;
}

/** Trainable adapter parameters: rank * (outDim + inDim) per target per
 * layer (the A matrix is rank x in, the B matrix out x rank). */
export function adapterParamCount(arch: ArchitectureSpec, lora: LoraConfig): number {
  let perLayer = 0;
  for (const target of lora.targets) {
    const [out, input] = projectionShape(arch, target);
    perLayer += lora.rank * (out + input);
  }
  return arch.layers * perLayer;
}

export function trainableFraction(arch: ArchitectureSpec, lora: LoraConfig): number {
  return adapterParamCount(arch, lora) / baseParamCount(arch);
}

export interface AccountingReport {
  architecture: string;
  baseParams: number;
  adapterParams: number;
  fraction: number;
  reductionPercent: number;
}

export function accountingReport(arch: ArchitectureSpec, lora: LoraConfig): AccountingReport {
  const baseParams = baseParamCount(arch);
  const adapterParams = adapterParamCount(arch, lora);
  return {
    architecture: arch.name,
    baseParams,
    adapterParams,
    fraction: adapterParams / baseParams,
    reductionPercent: (1 - adapterParams / baseParams) * 100,
  };
}
