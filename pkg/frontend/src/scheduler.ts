/**
 * Sigma-space samplers over the probability-flow ODE.
 *
 * "euler" takes single forward-Euler steps; "lms" is the order-2 linear
 * multistep variant (Adams-Bashforth on the sigma grid, Euler bootstrap).
 * Both walk a log-spaced sigma schedule ending at zero.
 */

export const SIGMA_MAX = 14.6;
export const SIGMA_MIN = 0.03;

export interface Scheduler {
  readonly id: string;
  readonly sigmas: number[];
  /** Advance latents in place given the noise prediction at step index i. */
  step(latents: Float32Array, noisePrediction: Float32Array, index: number): void;
}

export function makeSigmas(steps: number): number[] {
  const sigmas: number[] = [];
  if (steps === 1) {
    sigmas.push(SIGMA_MAX);
  } else {
    const logMax = Math.log(SIGMA_MAX);
    const logMin = Math.log(SIGMA_MIN);
    for (let i = 0; i < steps; i++) {
      if (i === 0) {
        sigmas.push(SIGMA_MAX);
      } else if (i === steps - 1) {
        sigmas.push(SIGMA_MIN);
      } else {
        sigmas.push(Math.exp(logMax + (logMin - logMax) * (i / (steps - 1))));
      }
    }
  }
  sigmas.push(0);
  return sigmas;
}

class EulerScheduler implements Scheduler {
  readonly id = "euler";
  readonly sigmas: number[];

  constructor(steps: number) {
    this.sigmas = makeSigmas(steps);
  }

  step(latents: Float32Array, noisePrediction: Float32Array, index: number): void {
    const dt = this.sigmas[index + 1] - this.sigmas[index];
    for (let i = 0; i < latents.length; i++) {
      latents[i] += dt * noisePrediction[i];
    }
  }
}

class LmsScheduler implements Scheduler {
  readonly id = "lms";
  readonly sigmas: number[];
  private previous: Float32Array | null = null;

  constructor(steps: number) {
    this.sigmas = makeSigmas(steps);
  }

  step(latents: Float32Array, noisePrediction: Float32Array, index: number): void {
    const dt = this.sigmas[index + 1] - this.sigmas[index];
    if (this.previous === null || index === 0) {
      for (let i = 0; i < latents.length; i++) {
        latents[i] += dt * noisePrediction[i];
      }
    } else {
      // two-step Adams-Bashforth with the non-uniform-grid correction
      const dtPrev = this.sigmas[index] - this.sigmas[index - 1];
      const ratio = dt / (2 * dtPrev);
      const wCurrent = 1 + ratio;
      const wPrevious = -ratio;
      const prev = this.previous;
      for (let i = 0; i < latents.length; i++) {
        latents[i] += dt * (wCurrent * noisePrediction[i] + wPrevious * prev[i]);
      }
    }
    this.previous = Float32Array.from(noisePrediction);
  }
}

export function makeScheduler(id: string, steps: number): Scheduler {
  if (steps < 1) {
    throw new Error(`steps must be >= 1, got ${steps}`);
  }
  switch (id) {
    case "euler":
      return new EulerScheduler(steps);
    case "lms":
      return new LmsScheduler(steps);
    default:
      throw new Error(`unknown scheduler '${id}' (use "lms" or "euler")`);
  }
}
