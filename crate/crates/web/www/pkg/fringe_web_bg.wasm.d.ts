/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_sceneview_free: (a: number, b: number) => void;
export const coverage: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const generate_scene: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const grid_anchors: (a: number, b: number, c: number) => [number, number, number, number];
export const grid_total: (a: number, b: number, c: number) => [number, number, number];
export const sceneview_clean_rgba: (a: number) => [number, number];
export const sceneview_corrupted_rgba: (a: number) => [number, number];
export const sceneview_mae: (a: number) => number;
export const sceneview_mse: (a: number) => number;
export const sceneview_psnr: (a: number) => number;
export const sceneview_size: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
