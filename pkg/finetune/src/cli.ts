/**
 * Harness entry point.
 *
 *   node dist/cli.js train --train train.jsonl --val val.jsonl --out outdir [--config run.toml]
 *   node dist/cli.js export --checkpoint ckpt.json --test test.jsonl --out gen.jsonl [--model NAME]
 *   node dist/cli.js accounting [--rank 16]
 */

import { DEFAULT_LORA, DEFAULT_TRAIN, loadConfigFile } from "./config.js";
import { REFERENCE_1B, accountingReport } from "./accounting.js";
import { exportGenerations } from "./export.js";
import { train } from "./train.js";

function parseArgs(argv: string[]): { command: string; flags: Record<string, string> } {
  const [command, ...rest] = argv;
  const flags: Record<string, string> = {};
  for (let i = 0; i < rest.length; i += 2) {
    const key = rest[i];
    const value = rest[i + 1];
    if (!key?.startsWith("--") || value === undefined) {
      throw new Error(`cannot parse arguments near '${key}'`);
    }
    flags[key.slice(2)] = value;
  }
  return { command: command ?? "", flags };
}

function need(flags: Record<string, string>, key: string): string {
  const value = flags[key];
  if (!value) throw new Error(`missing required flag --${key}`);
  return value;
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  const { command, flags } = parsed;
  try {
    if (command === "train") {
      const config = flags.config
        ? loadConfigFile(flags.config)
        : { lora: DEFAULT_LORA, train: DEFAULT_TRAIN };
      const result = train({
        trainPath: need(flags, "train"),
        valPath: need(flags, "val"),
        outDir: need(flags, "out"),
        lora: config.lora,
        train: config.train,
      });
      const last = result.epochLogs[result.epochLogs.length - 1];
      console.log(
        `trained ${result.epochLogs.length} epochs; ` +
          `final val loss ${last?.valLoss.toFixed(4)}; ` +
          `adapter params ${result.adapterParams}; ` +
          `checkpoint ${result.checkpointPath}`,
      );
      if (result.baseChecksumBefore !== result.baseChecksumAfter) {
        console.error("base weights changed during training; refusing to continue");
        return 1;
      }
      return 0;
    }
    if (command === "export") {
      const result = exportGenerations({
        checkpointPath: need(flags, "checkpoint"),
        testPath: need(flags, "test"),
        outPath: need(flags, "out"),
        modelName: flags.model ?? "lora-tiny",
      });
      console.log(`wrote ${result.lines} generations to ${flags.out}`);
      return 0;
    }
    if (command === "accounting") {
      const rank = flags.rank ? Number(flags.rank) : DEFAULT_LORA.rank;
      const report = accountingReport(REFERENCE_1B, { ...DEFAULT_LORA, rank });
      console.log(JSON.stringify(report, null, 2));
      return 0;
    }
    console.error(`unknown command '${command}'; expected train | export | accounting`);
    return 2;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js");
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
