/** A four-region plan document matching the primary's plan schema. */

import { PlanDoc } from "../src/types.js";

export function fourRegionPlan(): PlanDoc {
  return {
    canvas: {
      width: 256,
      height: 192,
      object_count: 4,
      jitter_ratio: 0.5,
      overlap_x: 32,
      overlap_y: 16,
      latent_factor: 8,
    },
    center: [128, 96],
    split_axis: null,
    regions: [
      { index: 1, x: 0, y: 0, w: 144, h: 104 },
      { index: 2, x: 112, y: 0, w: 144, h: 104 },
      { index: 3, x: 0, y: 88, w: 144, h: 104 },
      { index: 4, x: 112, y: 88, w: 144, h: 104 },
    ],
    latent_regions: [
      { index: 1, x: 0, y: 0, w: 18, h: 13 },
      { index: 2, x: 14, y: 0, w: 18, h: 13 },
      { index: 3, x: 0, y: 11, w: 18, h: 13 },
      { index: 4, x: 14, y: 11, w: 18, h: 13 },
    ],
    prompts: [
      {
        text: "a photo of a single easel",
        subject_start: 20,
        subject_end: 25,
        category_id: 1,
        template_id: "photo_single",
      },
      {
        text: "a photo of a single seaplane",
        subject_start: 20,
        subject_end: 28,
        category_id: 2,
        template_id: "photo_single",
      },
      {
        text: "a photo of a single traffic light",
        subject_start: 20,
        subject_end: 33,
        category_id: 3,
        template_id: "photo_single",
      },
      {
        text: "a photo of a single canoe",
        subject_start: 20,
        subject_end: 25,
        category_id: 4,
        template_id: "photo_single",
      },
    ],
  };
}
