/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_degraded_rgba: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const scene_distance_rgba: (a: number) => [number, number];
export const scene_image_rgba: (a: number) => [number, number];
export const scene_mask_rgba: (a: number) => [number, number];
export const scene_nearest: (a: number, b: number, c: number) => [number, number];
export const scene_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
export const scene_scores: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const scene_size: (a: number) => number;
export const scene_weight_range: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_weight_rgba: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
