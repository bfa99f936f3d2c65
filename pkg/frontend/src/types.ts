/** Shared shapes for the bridge: plan documents, prompts, tensors. */

export interface CanvasDims {
  width: number;
  height: number;
  object_count: number;
  jitter_ratio: number;
  overlap_x: number;
  overlap_y: number;
  latent_factor: number;
}

export interface RegionRect {
  index: number;
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface PromptSpec {
  text: string;
  subject_start: number;
  subject_end: number;
  category_id: number;
  template_id: string;
}

/** Plan document as written by the primary `plan` subcommand. */
export interface PlanDoc {
  canvas: CanvasDims;
  center: [number, number];
  split_axis: string | null;
  regions: RegionRect[];
  latent_regions: RegionRect[];
  prompts?: PromptSpec[];
  sampler?: {
    seed: number;
    steps: number;
    guidance_scale: number;
    scheduler_id: string;
  };
}

export interface BridgeConfig {
  model: string;
  scheduler: string;
  steps: number;
  guidance: number;
  plan: string;
  seed: number;
  outputDir: string;
}

/** One captured attention tensor: axis order (heads, h, w, tokens). */
export interface AttentionTensor {
  heads: number;
  h: number;
  w: number;
  tokens: number;
  data: Float32Array;
}

export interface TokenMap {
  tokens: string[][];
  subject_token_indices: number[][];
}

/** Attention map sizes shrink by ceil-halving per resolution stage. */
export function attentionGrid(
  latentH: number,
  latentW: number,
  denom: number,
): [number, number] {
  let h = latentH;
  let w = latentW;
  for (let d = 8; d < denom; d *= 2) {
    h = Math.ceil(h / 2);
    w = Math.ceil(w / 2);
  }
  return [h, w];
}

export function resolutionDenominator(layerId: string): number {
  const tail = layerId.slice(layerId.lastIndexOf("-") + 1);
  const denom = Number(tail);
  if (![8, 16, 32].includes(denom)) {
    throw new Error(`layer id ${layerId} does not carry a resolution class`);
  }
  return denom;
}
