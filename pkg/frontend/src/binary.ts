/** Byte-level helpers: CRC32 and IEEE-754 half-precision packing. */

const CRC_TABLE = new Uint32Array(256);
for (let n = 0; n < 256; n++) {
  let c = n;
  for (let k = 0; k < 8; k++) {
    c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
  }
  CRC_TABLE[n] = c >>> 0;
}

export function crc32(data: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    crc = CRC_TABLE[(crc ^ data[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

const F32_BUF = new Float32Array(1);
const U32_VIEW = new Uint32Array(F32_BUF.buffer);

/** float32 -> float16 bits with round-to-nearest-even. */
export function floatToHalf(value: number): number {
  F32_BUF[0] = value;
  const bits = U32_VIEW[0];
  const sign = (bits >>> 16) & 0x8000;
  const exponent = (bits >>> 23) & 0xff;
  const mantissa = bits & 0x7fffff;

  if (exponent === 0xff) {
    // inf / nan
    return sign | 0x7c00 | (mantissa ? 0x200 : 0);
  }
  // re-bias from 127 to 15
  let halfExp = exponent - 127 + 15;
  if (halfExp >= 0x1f) {
    return sign | 0x7c00; // overflow to inf
  }
  if (halfExp <= 0) {
    if (halfExp < -10) {
      return sign; // underflow to zero
    }
    // subnormal: shift mantissa (with implicit leading 1)
    const full = mantissa | 0x800000;
    const shift = 14 - halfExp;
    let half = full >>> shift;
    const remainder = full & ((1 << shift) - 1);
    const halfway = 1 << (shift - 1);
    if (remainder > halfway || (remainder === halfway && (half & 1))) {
      half += 1;
    }
    return sign | half;
  }
  let half = (halfExp << 10) | (mantissa >>> 13);
  const remainder = mantissa & 0x1fff;
  if (remainder > 0x1000 || (remainder === 0x1000 && (half & 1))) {
    half += 1; // may carry into the exponent, which is correct behaviour
  }
  return sign | half;
}

export function halfToFloat(half: number): number {
  const sign = (half & 0x8000) ? -1 : 1;
  const exponent = (half >>> 10) & 0x1f;
  const mantissa = half & 0x3ff;
  if (exponent === 0) {
    return sign * 2 ** -14 * (mantissa / 1024);
  }
  if (exponent === 0x1f) {
    return mantissa ? Number.NaN : sign * Number.POSITIVE_INFINITY;
  }
  return sign * 2 ** (exponent - 15) * (1 + mantissa / 1024);
}

export function packHalf(values: Float32Array): Uint8Array {
  const out = new Uint8Array(values.length * 2);
  const view = new DataView(out.buffer);
  for (let i = 0; i < values.length; i++) {
    view.setUint16(i * 2, floatToHalf(values[i]), true);
  }
  return out;
}
