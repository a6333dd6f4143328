/* tslint:disable */
/* eslint-disable */

/**
 * A generated pair rendered for display.
 */
export class SceneView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA bytes of the normalised target.
     */
    clean_rgba(): Uint8Array;
    /**
     * RGBA bytes of the corrupted observation, `[0, 2]` mapped to black..white.
     */
    corrupted_rgba(): Uint8Array;
    readonly mae: number;
    readonly mse: number;
    readonly psnr: number;
    readonly size: number;
}

/**
 * Mean fraction of an image covered by `patches` uniformly placed patches.
 */
export function coverage(patches: number, size: number, patch: number, trials: number, seed: number): number;

/**
 * Generates scene `seed` with the given noise spec (e.g. `gaussian:0.15+pupil:0.8`)
 * and target (`cosine` or `sine`).
 */
export function generate_scene(seed: number, size: number, noise: string, target: string): SceneView;

/**
 * Sliding-window anchors along one dimension.
 */
export function grid_anchors(size: number, patch: number, stride: number): Uint32Array;

/**
 * Total number of patch inferences for a square image.
 */
export function grid_total(size: number, patch: number, stride: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_sceneview_free: (a: number, b: number) => void;
    readonly coverage: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly generate_scene: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly grid_anchors: (a: number, b: number, c: number) => [number, number, number, number];
    readonly grid_total: (a: number, b: number, c: number) => [number, number, number];
    readonly sceneview_clean_rgba: (a: number) => [number, number];
    readonly sceneview_corrupted_rgba: (a: number) => [number, number];
    readonly sceneview_mae: (a: number) => number;
    readonly sceneview_mse: (a: number) => number;
    readonly sceneview_psnr: (a: number) => number;
    readonly sceneview_size: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
