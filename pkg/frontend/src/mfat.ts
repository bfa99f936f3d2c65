/**
 * MFAT v1 writer (and a reader used by the tests).
 *
 * Byte layout: magic 4D 46 41 54 01, little-endian u32 header length, UTF-8
 * JSON header, then tensor payloads. Payloads are 64-byte aligned,
 * little-endian row-major with axis order (heads, h, w, tokens); the header
 * table records name, dtype, shape, byte offset/length and CRC32 each.
 */

import { Buffer } from "node:buffer";

import { crc32, halfToFloat, packHalf } from "./binary.js";
import { AttentionTensor, PlanDoc, PromptSpec, TokenMap } from "./types.js";

export const MAGIC = Buffer.from("MFAT", "ascii");
export const VERSION = 1;
export const ALIGNMENT = 64;

export interface TensorEntry {
  name: string;
  dtype: "f16" | "f32";
  shape: number[];
  byte_offset: number;
  byte_length: number;
  crc32: number;
}

export interface SamplerInfo {
  seed: number;
  steps: number;
  guidance_scale: number;
  scheduler_id: string;
}

export interface MfatDocument {
  plan: PlanDoc;
  prompts: PromptSpec[];
  tokenMap: TokenMap;
  sampler: SamplerInfo;
  backendId: string;
  imageName: string;
  /** name -> tensor; write order follows the given map order. */
  tensors: Map<string, AttentionTensor>;
}

export function tensorName(regionIndex: number, step: number, layerId: string): string {
  return `region${regionIndex}/t${step}/layer${layerId}`;
}

/** Deterministic JSON with recursively sorted keys (matches the primary). */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
  return `{${entries.join(",")}}`;
}

function padTo(n: number): number {
  return (ALIGNMENT - (n % ALIGNMENT)) % ALIGNMENT;
}

export function encodeMfat(doc: MfatDocument): Buffer {
  const payloads: Uint8Array[] = [];
  const table: TensorEntry[] = [];
  for (const [name, tensor] of doc.tensors) {
    const packed = packHalf(tensor.data);
    table.push({
      name,
      dtype: "f16",
      shape: [tensor.heads, tensor.h, tensor.w, tensor.tokens],
      byte_offset: 0,
      byte_length: packed.length,
      crc32: crc32(packed),
    });
    payloads.push(packed);
  }

  const header = {
    plan: {
      canvas: doc.plan.canvas,
      center: doc.plan.center,
      split_axis: doc.plan.split_axis,
      regions: doc.plan.regions,
      latent_regions: doc.plan.latent_regions,
    },
    prompts: doc.prompts,
    token_map: {
      tokens: doc.tokenMap.tokens,
      subject_token_indices: doc.tokenMap.subject_token_indices,
    },
    sampler: doc.sampler,
    backend_id: doc.backendId,
    image: doc.imageName,
    tensors: table,
  };

  // offsets live inside the header; they only grow, so iterate to fixpoint
  let headerBytes = Buffer.alloc(0);
  let previousLength = -1;
  for (;;) {
    headerBytes = Buffer.from(canonicalJson(header), "utf-8");
    if (headerBytes.length === previousLength) {
      break;
    }
    previousLength = headerBytes.length;
    let offset = 5 + 4 + headerBytes.length;
    for (let i = 0; i < table.length; i++) {
      offset += padTo(offset);
      table[i].byte_offset = offset;
      offset += payloads[i].length;
    }
  }

  const pieces: Buffer[] = [
    MAGIC,
    Buffer.from([VERSION]),
    (() => {
      const b = Buffer.alloc(4);
      b.writeUInt32LE(headerBytes.length, 0);
      return b;
    })(),
    headerBytes,
  ];
  let position = 5 + 4 + headerBytes.length;
  for (let i = 0; i < table.length; i++) {
    const pad = padTo(position);
    if (pad) {
      pieces.push(Buffer.alloc(pad));
      position += pad;
    }
    pieces.push(Buffer.from(payloads[i]));
    position += payloads[i].length;
  }
  return Buffer.concat(pieces);
}

export interface ParsedMfat {
  header: any;
  tensors: Map<string, { shape: number[]; values: Float32Array }>;
}

/** Structural reader used by the bridge's own tests. */
export function decodeMfat(data: Buffer): ParsedMfat {
  if (data.length < 9 || !data.subarray(0, 4).equals(MAGIC)) {
    throw new Error("not an MFAT file");
  }
  if (data[4] !== VERSION) {
    throw new Error(`unsupported MFAT version ${data[4]}`);
  }
  const headerLength = data.readUInt32LE(5);
  const header = JSON.parse(data.subarray(9, 9 + headerLength).toString("utf-8"));
  const tensors = new Map<string, { shape: number[]; values: Float32Array }>();
  for (const entry of header.tensors as TensorEntry[]) {
    const blob = data.subarray(entry.byte_offset, entry.byte_offset + entry.byte_length);
    if (blob.length !== entry.byte_length) {
      throw new Error(`tensor ${entry.name} spans past the end of the file`);
    }
    if (entry.byte_offset % ALIGNMENT !== 0) {
      throw new Error(`tensor ${entry.name} is not ${ALIGNMENT}-byte aligned`);
    }
    if (crc32(blob) !== entry.crc32) {
      throw new Error(`tensor ${entry.name} fails its checksum`);
    }
    const count = entry.byte_length / 2;
    const values = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      values[i] = halfToFloat(blob[2 * i] | (blob[2 * i + 1] << 8));
    }
    tensors.set(entry.name, { shape: entry.shape, values });
  }
  return { header, tensors };
}
