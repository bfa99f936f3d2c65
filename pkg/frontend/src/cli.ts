/**
 * Bridge CLI: `node dist/cli.js --config bridge.json [--dry-run]`.
 *
 * The config file carries: model, scheduler, steps, guidance, plan (path to
 * a plan document from the primary `plan` subcommand), seed, outputDir.
 * Exit codes: 0 success, 2 bad config/plan, 3 model load failure, 4 I/O.
 */

import { readFileSync } from "node:fs";

import { runBridge, shapeReport, loadPlan, PlanError, OutOfMemory } from "./bridge.js";
import { loadModel, ModelLoadFailure } from "./model.js";
import { BridgeConfig } from "./types.js";

function parseArgs(argv: string[]): { configPath: string; dryRun: boolean } {
  let configPath = "";
  let dryRun = false;
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--config") {
      configPath = argv[++i] ?? "";
    } else if (argv[i] === "--dry-run") {
      dryRun = true;
    } else {
      throw new PlanError(`unknown argument ${argv[i]}`);
    }
  }
  if (!configPath) {
    throw new PlanError("usage: cli.js --config CONFIG.json [--dry-run]");
  }
  return { configPath, dryRun };
}

function loadConfig(path: string): BridgeConfig {
  let raw: any;
  try {
    raw = JSON.parse(readFileSync(path, "utf-8"));
  } catch (error) {
    throw new PlanError(`cannot parse config file ${path}: ${error}`);
  }
  const config: BridgeConfig = {
    model: raw.model ?? "synthetic",
    scheduler: raw.scheduler ?? "lms",
    steps: raw.steps ?? 50,
    guidance: raw.guidance ?? 7.5,
    plan: raw.plan,
    seed: raw.seed ?? 0,
    outputDir: raw.outputDir ?? "bridge_out",
  };
  if (!config.plan) {
    throw new PlanError("config is missing 'plan' (path to a plan document)");
  }
  if (config.steps < 1 || config.guidance <= 0) {
    throw new PlanError("steps must be >= 1 and guidance positive");
  }
  return config;
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (error) {
    console.error(String(error));
    return 2;
  }
  try {
    const config = loadConfig(parsed.configPath);
    if (parsed.dryRun) {
      const plan = loadPlan(config.plan);
      loadModel(config.model, config.seed,
                plan.canvas.overlap_x, plan.canvas.overlap_y);
      const report = shapeReport(plan, config.steps);
      console.log(JSON.stringify(report, null, 2));
      return 0;
    }
    const output = runBridge(config);
    console.log(`wrote ${output.mfatPath} (${output.tensorCount} tensors) ` +
      `and ${output.pngPath}`);
    return 0;
  } catch (error) {
    console.error(String(error));
    if (error instanceof ModelLoadFailure) {
      return 3;
    }
    if (error instanceof PlanError) {
      return 2;
    }
    if (error instanceof OutOfMemory) {
      return 3;
    }
    return 4;
  }
}

process.exit(main(process.argv.slice(2)));
