/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    degraded_rgba(blur: number, shift: number, noise: number, seed: bigint): Uint8Array;
    /**
     * Distance to the nearest object pixel, scaled by the largest distance.
     */
    distance_rgba(): Uint8Array;
    image_rgba(): Uint8Array;
    mask_rgba(): Uint8Array;
    /**
     * `[distance, row, col]` of the object pixel nearest to `(row, col)`.
     */
    nearest(row: number, col: number): Float64Array;
    constructor(seed: bigint, size: number, contrast: number, max_objects: number);
    /**
     * Metrics of the degraded prediction: `[mae, s_alpha, e_phi_mean, e_phi_max, f_w]`.
     */
    scores(blur: number, shift: number, noise: number, seed: bigint): Float64Array;
    size(): number;
    /**
     * `[min, max]` of the weight map.
     */
    weight_range(lambda: number, kernel: number): Float64Array;
    /**
     * Loss weights mapped from `[1, 1 + lambda]` onto a heat scale.
     */
    weight_rgba(lambda: number, kernel: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_degraded_rgba: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly scene_distance_rgba: (a: number) => [number, number];
    readonly scene_image_rgba: (a: number) => [number, number];
    readonly scene_mask_rgba: (a: number) => [number, number];
    readonly scene_nearest: (a: number, b: number, c: number) => [number, number];
    readonly scene_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
    readonly scene_scores: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly scene_size: (a: number) => number;
    readonly scene_weight_range: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_weight_rgba: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
