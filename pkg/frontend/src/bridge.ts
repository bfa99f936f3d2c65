/**
 * Region-wise simultaneous diffusion with attention capture.
 *
 * One full-canvas latent noise tensor is drawn from the seed; every step
 * runs the noise predictor per region crop under that region's prompt,
 * averages overlapping predictions uniformly per latent cell, and advances
 * the shared latent with the scheduler. Cross-attention tensors from the
 * conditional pass are captured for every instrumented layer at every step
 * and exported as MFAT v1 plus the decoded PNG.
 */

import { readFileSync, mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { loadModel, LATENT_CHANNELS, SyntheticModel } from "./model.js";
import { encodeMfat, tensorName, MfatDocument } from "./mfat.js";
import { encodePng } from "./png.js";
import { Rng } from "./rng.js";
import { makeScheduler } from "./scheduler.js";
import { subjectIndices, tokenize } from "./tokenizer.js";
import {
  AttentionTensor,
  BridgeConfig,
  PlanDoc,
  RegionRect,
  TokenMap,
  attentionGrid,
} from "./types.js";
import { RegionContext } from "./model.js";

export class PlanError extends Error {}

export class OutOfMemory extends Error {}

export function loadPlan(path: string): PlanDoc {
  let doc: PlanDoc;
  try {
    doc = JSON.parse(readFileSync(path, "utf-8"));
  } catch (error) {
    throw new PlanError(`cannot parse plan file ${path}: ${error}`);
  }
  if (!doc.canvas || !Array.isArray(doc.regions) || !Array.isArray(doc.latent_regions)) {
    throw new PlanError(`plan file ${path} is missing canvas/regions/latent_regions`);
  }
  if (doc.regions.length !== doc.latent_regions.length) {
    throw new PlanError("plan regions and latent_regions disagree in length");
  }
  if (!Array.isArray(doc.prompts) || doc.prompts.length !== doc.regions.length) {
    throw new PlanError("plan file must carry one prompt per region");
  }
  for (const [region, latent] of doc.regions.map(
    (r, i) => [r, doc.latent_regions[i]] as const)) {
    const u = doc.canvas.latent_factor;
    if (latent.x * u !== region.x || latent.y * u !== region.y ||
        latent.w * u !== region.w || latent.h * u !== region.h) {
      throw new PlanError(`latent region ${latent.index} does not scale back to ` +
        `its pixel region by the latent factor ${u}`);
    }
  }
  return doc;
}

export function buildTokenMap(plan: PlanDoc): {
  tokenMap: TokenMap;
  contexts: RegionContext[];
} {
  const tokens: string[][] = [];
  const subjects: number[][] = [];
  const contexts: RegionContext[] = [];
  const strip = (s: string) => s.replace(/[^A-Za-z0-9_']/g, "");
  plan.prompts!.forEach((prompt, i) => {
    const tokenized = tokenize(prompt.text);
    const subject = subjectIndices(tokenized, prompt.subject_start, prompt.subject_end);
    // the sub-words under the subject indices must reassemble the category name
    const assembled = strip(subject.map((t) => tokenized.tokens[t]).join(""));
    const name = strip(prompt.text.slice(prompt.subject_start, prompt.subject_end));
    if (!assembled.includes(name)) {
      throw new PlanError(`subject tokens "${assembled}" do not contain "${name}"`);
    }
    tokens.push(tokenized.tokens);
    subjects.push(subject);
    contexts.push({
      region: plan.regions[i],
      latent: plan.latent_regions[i],
      tokenCount: tokenized.tokens.length,
      subjectTokens: subject,
    });
  });
  return { tokenMap: { tokens, subject_token_indices: subjects }, contexts };
}

export interface ShapeReport {
  canvas: { width: number; height: number };
  latent: { width: number; height: number; channels: number };
  regions: Array<{
    index: number;
    latent: { w: number; h: number };
    tokens: number;
    layers: Array<{ layer: string; h: number; w: number }>;
  }>;
  stepsPlanned: number;
  largestRegionCells: number;
}

export function shapeReport(plan: PlanDoc, steps: number): ShapeReport {
  const { contexts } = buildTokenMap(plan);
  return {
    canvas: { width: plan.canvas.width, height: plan.canvas.height },
    latent: {
      width: plan.canvas.width / plan.canvas.latent_factor,
      height: plan.canvas.height / plan.canvas.latent_factor,
      channels: LATENT_CHANNELS,
    },
    regions: contexts.map((ctx) => ({
      index: ctx.region.index,
      latent: { w: ctx.latent.w, h: ctx.latent.h },
      tokens: ctx.tokenCount,
      layers: [32, 16, 8].map((denom) => {
        const [h, w] = attentionGrid(ctx.latent.h, ctx.latent.w, denom);
        return { layer: `1/${denom}`, h, w };
      }),
    })),
    stepsPlanned: steps,
    largestRegionCells: Math.max(...contexts.map((c) => c.latent.w * c.latent.h)),
  };
}

export function cropLatent(
  canvas: Float32Array,
  canvasW: number,
  canvasH: number,
  region: RegionRect,
): Float32Array {
  const out = new Float32Array(LATENT_CHANNELS * region.h * region.w);
  const plane = canvasW * canvasH;
  for (let c = 0; c < LATENT_CHANNELS; c++) {
    for (let y = 0; y < region.h; y++) {
      const src = c * plane + (region.y + y) * canvasW + region.x;
      out.set(canvas.subarray(src, src + region.w), (c * region.h + y) * region.w);
    }
  }
  return out;
}

export function scatterAdd(
  acc: Float32Array,
  weight: Float32Array,
  canvasW: number,
  canvasH: number,
  region: RegionRect,
  values: Float32Array,
): void {
  const plane = canvasW * canvasH;
  for (let c = 0; c < LATENT_CHANNELS; c++) {
    for (let y = 0; y < region.h; y++) {
      const dst = c * plane + (region.y + y) * canvasW + region.x;
      const src = (c * region.h + y) * region.w;
      for (let x = 0; x < region.w; x++) {
        acc[dst + x] += values[src + x];
        if (c === 0) {
          weight[(region.y + y) * canvasW + region.x + x] += 1;
        }
      }
    }
  }
}

/** Uniform averaging of overlapped predictions: divide by contributor count. */
export function averageOverlaps(
  acc: Float32Array,
  weight: Float32Array,
  plane: number,
): void {
  for (let c = 0; c < LATENT_CHANNELS; c++) {
    for (let cell = 0; cell < plane; cell++) {
      if (weight[cell] > 0) {
        acc[c * plane + cell] /= weight[cell];
      }
    }
  }
}

export interface BridgeOutput {
  mfatPath: string;
  pngPath: string;
  tensorCount: number;
}

export function runBridge(config: BridgeConfig): BridgeOutput {
  const plan = loadPlan(config.plan);
  const model = loadModel(config.model, config.seed,
                          plan.canvas.overlap_x, plan.canvas.overlap_y);
  const scheduler = makeScheduler(config.scheduler, config.steps);
  const { tokenMap, contexts } = buildTokenMap(plan);

  const latentW = plan.canvas.width / plan.canvas.latent_factor;
  const latentH = plan.canvas.height / plan.canvas.latent_factor;

  let latents: Float32Array;
  let captured: Map<string, AttentionTensor>;
  try {
    latents = new Float32Array(LATENT_CHANNELS * latentH * latentW);
    captured = new Map();
  } catch (error) {
    throw new OutOfMemory(
      `cannot allocate the canvas latent; largest region is ` +
      `${Math.max(...contexts.map((c) => c.latent.w * c.latent.h))} cells: ${error}`);
  }

  // shared initialization noise for every region, scaled to the first sigma
  const rng = new Rng(config.seed);
  rng.fillGaussian(latents);
  for (let i = 0; i < latents.length; i++) {
    latents[i] *= scheduler.sigmas[0];
  }

  const noiseAcc = new Float32Array(latents.length);
  const weight = new Float32Array(latentH * latentW);
  for (let stepIndex = 0; stepIndex < config.steps; stepIndex++) {
    const sigma = scheduler.sigmas[stepIndex];
    noiseAcc.fill(0);
    weight.fill(0);
    for (const context of contexts) {
      const crop = cropLatent(latents, latentW, latentH, context.latent);
      const prediction = model.predict(crop, sigma, stepIndex, config.steps, context);
      scatterAdd(noiseAcc, weight, latentW, latentH, context.latent, prediction.noise);
      for (const [layerId, tensor] of prediction.attentions) {
        captured.set(tensorName(context.region.index, stepIndex + 1, layerId), tensor);
      }
    }
    averageOverlaps(noiseAcc, weight, latentW * latentH);
    scheduler.step(latents, noiseAcc, stepIndex);
  }

  const rgb = (model as SyntheticModel).decode(latents, latentH, latentW);
  const png = encodePng(rgb, plan.canvas.width, plan.canvas.height);

  // deterministic, write-order-stable tensor map: region, then step, then layer
  const ordered = new Map<string, AttentionTensor>();
  for (const context of contexts) {
    for (let step = 1; step <= config.steps; step++) {
      for (const layerId of [...new Set(
        [...captured.keys()]
          .filter((k) => k.startsWith(`region${context.region.index}/t${step}/`))
          .map((k) => k.split("/layer")[1]),
      )].sort()) {
        const key = tensorName(context.region.index, step, layerId);
        ordered.set(key, captured.get(key)!);
      }
    }
  }

  const stem = `bridge_${String(config.seed).padStart(8, "0")}`;
  const doc: MfatDocument = {
    plan,
    prompts: plan.prompts!,
    tokenMap,
    sampler: {
      seed: config.seed,
      steps: config.steps,
      guidance_scale: config.guidance,
      scheduler_id: config.scheduler,
    },
    backendId: `sd-bridge/${model.id}`,
    imageName: `${stem}.png`,
    tensors: ordered,
  };

  mkdirSync(config.outputDir, { recursive: true });
  const mfatPath = join(config.outputDir, `${stem}.mfat`);
  const pngPath = join(config.outputDir, `${stem}.png`);
  writeFileSync(mfatPath, encodeMfat(doc));
  writeFileSync(pngPath, png);
  return { mfatPath, pngPath, tensorCount: ordered.size };
}
