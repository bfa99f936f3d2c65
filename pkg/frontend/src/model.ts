/**
 * Noise-prediction model boundary.
 *
 * A real checkpoint would be loaded behind this interface (the attention
 * hooks only need `predict` to surface per-layer softmax rows). The
 * deterministic synthetic model ships with the bridge: it implants one
 * elliptical object per region, predicts noise toward a rendered target
 * latent, and computes its cross-attention literally as
 * softmax(Q K^T / sqrt(d)) over designed queries.
 */

import { Rng } from "./rng.js";
import { AttentionTensor, RegionRect, attentionGrid } from "./types.js";

export const LATENT_CHANNELS = 4;
export const LAYER_IDS = ["mid-32", "up0-16", "up1-8"] as const;

export class ModelLoadFailure extends Error {}

export interface RegionContext {
  region: RegionRect;
  latent: RegionRect;
  tokenCount: number;
  subjectTokens: number[];
}

export interface Prediction {
  /** Same layout as the latent crop: (channels, h, w). */
  noise: Float32Array;
  /** One tensor per instrumented cross-attention layer. */
  attentions: Map<string, AttentionTensor>;
}

export interface NoisePredictor {
  readonly id: string;
  readonly heads: number;
  predict(
    crop: Float32Array,
    sigma: number,
    stepIndex: number,
    totalSteps: number,
    context: RegionContext,
  ): Prediction;
}

interface Blob {
  cx: number;
  cy: number;
  rx: number;
  ry: number;
  theta: number;
}

interface RegionScene {
  blob: Blob;
  background: [number, number, number];
  foreground: [number, number, number];
  headJitter: Float32Array; // (heads * tokenCount)
  subjectScales: number[];
}

function phi(blob: Blob, x: number, y: number): number {
  const dx = x - blob.cx;
  const dy = y - blob.cy;
  const c = Math.cos(blob.theta);
  const s = Math.sin(blob.theta);
  const u = (dx * c + dy * s) / blob.rx;
  const v = (-dx * s + dy * c) / blob.ry;
  return u * u + v * v;
}

export class SyntheticModel implements NoisePredictor {
  readonly id = "synthetic";
  readonly heads = 2;
  private readonly seed: number;
  private readonly overlapX: number;
  private readonly overlapY: number;
  private readonly scenes = new Map<number, RegionScene>();

  constructor(seed: number, overlapX: number, overlapY: number) {
    this.seed = seed;
    this.overlapX = overlapX;
    this.overlapY = overlapY;
  }

  scene(context: RegionContext): RegionScene {
    const cached = this.scenes.get(context.region.index);
    if (cached) {
      return cached;
    }
    const rng = new Rng(this.seed, context.region.index, 77);
    const { w, h } = context.latent;
    const m = Math.min(w, h);
    let rx = m * rng.uniform(0.21, 0.27);
    let ry = m * rng.uniform(0.21, 0.27);
    const theta = rng.uniform(0, Math.PI);
    const padX = this.overlapX / 8 + 1;
    const padY = this.overlapY / 8 + 1;
    let ex = 0;
    let ey = 0;
    for (let tries = 0; tries < 64; tries++) {
      ex = Math.hypot(rx * Math.cos(theta), ry * Math.sin(theta));
      ey = Math.hypot(rx * Math.sin(theta), ry * Math.cos(theta));
      if (padX + ex < w - padX - ex && padY + ey < h - padY - ey) {
        break;
      }
      rx *= 0.9;
      ry *= 0.9;
    }
    const clamp = (v: number, lo: number, hi: number) =>
      Math.min(Math.max(v, lo), hi);
    const cx = clamp(w / 2 + m * rng.uniform(-0.05, 0.05), padX + ex, w - padX - ex);
    const cy = clamp(h / 2 + m * rng.uniform(-0.05, 0.05), padY + ey, h - padY - ey);

    const darken = rng.uniform(0.25, 0.45);
    const brighten = rng.uniform(0.55, 0.85);
    const background: [number, number, number] = [
      -darken + rng.uniform(-0.1, 0.1),
      -darken + rng.uniform(-0.1, 0.1),
      -darken + rng.uniform(-0.1, 0.1),
    ];
    const foreground: [number, number, number] = [
      brighten + rng.uniform(-0.1, 0.1),
      brighten + rng.uniform(-0.1, 0.1),
      brighten + rng.uniform(-0.1, 0.1),
    ];
    const headJitter = new Float32Array(this.heads * context.tokenCount);
    for (let i = 0; i < headJitter.length; i++) {
      headJitter[i] = 0.05 * rng.gaussian();
    }
    const subjectScales = context.subjectTokens.map(() => rng.uniform(0.9, 1.0));
    const scene: RegionScene = {
      blob: { cx, cy, rx, ry, theta },
      background,
      foreground,
      headJitter,
      subjectScales,
    };
    this.scenes.set(context.region.index, scene);
    return scene;
  }

  /** Clean latent the sampler converges to: blob rendered over background. */
  targetLatent(context: RegionContext): Float32Array {
    const { w, h } = context.latent;
    const scene = this.scene(context);
    const out = new Float32Array(LATENT_CHANNELS * h * w);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const inside = phi(scene.blob, x + 0.5, y + 0.5) < 1;
        const color = inside ? scene.foreground : scene.background;
        const cell = y * w + x;
        out[cell] = color[0];
        out[h * w + cell] = color[1];
        out[2 * h * w + cell] = color[2];
        out[3 * h * w + cell] = inside ? 1 : -1;
      }
    }
    return out;
  }

  predict(
    crop: Float32Array,
    sigma: number,
    stepIndex: number,
    totalSteps: number,
    context: RegionContext,
  ): Prediction {
    const target = this.targetLatent(context);
    if (crop.length !== target.length) {
      throw new Error(
        `latent crop has ${crop.length} values, region needs ${target.length}`);
    }
    const noise = new Float32Array(crop.length);
    const safeSigma = Math.max(sigma, 1e-6);
    for (let i = 0; i < crop.length; i++) {
      noise[i] = (crop[i] - target[i]) / safeSigma;
    }

    const attentions = new Map<string, AttentionTensor>();
    for (const layerId of LAYER_IDS) {
      attentions.set(layerId, this.attention(layerId, stepIndex, totalSteps, context));
    }
    return { noise, attentions };
  }

  /** Cross-attention rows computed literally from designed queries. */
  attention(
    layerId: string,
    stepIndex: number,
    totalSteps: number,
    context: RegionContext,
  ): AttentionTensor {
    const denom = Number(layerId.slice(layerId.lastIndexOf("-") + 1));
    const [h, w] = attentionGrid(context.latent.h, context.latent.w, denom);
    const scene = this.scene(context);
    const l = context.tokenCount;

    // edges sharpen as denoising progresses
    const progress = totalSteps <= 1 ? 0.5 : stepIndex / (totalSteps - 1);
    const kappa = 4 + 10 * progress;
    const gamma = 6;

    // queries carry the blob structure; keys are sqrt(d) * identity, so the
    // scaled dot product reproduces the designed logits exactly
    const data = new Float32Array(this.heads * h * w * l);
    const logits = new Float64Array(l);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const px = ((x + 0.5) * context.latent.w) / w;
        const py = ((y + 0.5) * context.latent.h) / h;
        const field = Math.tanh(kappa * (1 - phi(scene.blob, px, py)));
        for (let head = 0; head < this.heads; head++) {
          logits.fill(0);
          context.subjectTokens.forEach((token, ordinal) => {
            logits[token] = gamma * scene.subjectScales[ordinal] * field;
          });
          logits[0] = -0.3 * gamma * field;
          for (let token = 0; token < l; token++) {
            logits[token] += scene.headJitter[head * l + token];
          }
          let max = -Infinity;
          for (let token = 0; token < l; token++) {
            max = Math.max(max, logits[token]);
          }
          let sum = 0;
          for (let token = 0; token < l; token++) {
            logits[token] = Math.exp(logits[token] - max);
            sum += logits[token];
          }
          const base = ((head * h + y) * w + x) * l;
          for (let token = 0; token < l; token++) {
            data[base + token] = logits[token] / sum;
          }
        }
      }
    }
    return { heads: this.heads, h, w, tokens: l, data };
  }

  /** VAE stand-in: latent channels 0..2 to RGB, nearest-upsampled by 8. */
  decode(latent: Float32Array, latentH: number, latentW: number): Uint8Array {
    const width = latentW * 8;
    const height = latentH * 8;
    const rgb = new Uint8Array(width * height * 3);
    const plane = latentH * latentW;
    for (let y = 0; y < height; y++) {
      const ly = Math.floor(y / 8);
      for (let x = 0; x < width; x++) {
        const lx = Math.floor(x / 8);
        const cell = ly * latentW + lx;
        for (let c = 0; c < 3; c++) {
          const value = latent[c * plane + cell];
          const byte = Math.round(((value + 1) / 2) * 255);
          rgb[(y * width + x) * 3 + c] = Math.min(255, Math.max(0, byte));
        }
      }
    }
    return rgb;
  }
}

export function loadModel(
  id: string,
  seed: number,
  overlapX: number,
  overlapY: number,
): SyntheticModel {
  if (id !== "synthetic") {
    throw new ModelLoadFailure(
      `model '${id}' is not available in this environment; ` +
      `only the built-in 'synthetic' test model can run without a diffusion runtime`);
  }
  return new SyntheticModel(seed, overlapX, overlapY);
}
