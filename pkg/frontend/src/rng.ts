/** Deterministic PRNG: splitmix64 streams with Box-Muller gaussians. */

const GOLDEN = 0x9e3779b97f4a7c15n;
const MASK64 = 0xffffffffffffffffn;

export class Rng {
  private state: bigint;
  private spare: number | null = null;

  constructor(...seeds: number[]) {
    let mixed = 0n;
    for (const seed of seeds) {
      mixed = splitmix(mixed ^ BigInt(Math.trunc(seed)));
    }
    this.state = mixed;
  }

  nextU64(): bigint {
    this.state = (this.state + GOLDEN) & MASK64;
    return finalize(this.state);
  }

  /** Uniform in [0, 1) with 53 bits of entropy. */
  next(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  uniform(lo: number, hi: number): number {
    return lo + (hi - lo) * this.next();
  }

  int(loInclusive: number, hiExclusive: number): number {
    return loInclusive + Math.floor(this.next() * (hiExclusive - loInclusive));
  }

  gaussian(): number {
    if (this.spare !== null) {
      const value = this.spare;
      this.spare = null;
      return value;
    }
    const u = Math.max(this.next(), 1e-300);
    const v = this.next();
    const radius = Math.sqrt(-2 * Math.log(u));
    this.spare = radius * Math.sin(2 * Math.PI * v);
    return radius * Math.cos(2 * Math.PI * v);
  }

  fillGaussian(out: Float32Array): void {
    for (let i = 0; i < out.length; i++) {
      out[i] = this.gaussian();
    }
  }
}

function splitmix(state: bigint): bigint {
  let z = (state + GOLDEN) & MASK64;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return (z ^ (z >> 31n)) & MASK64;
}

function finalize(state: bigint): bigint {
  return splitmix(state);
}
