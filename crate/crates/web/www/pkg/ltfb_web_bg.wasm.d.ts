/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_explorer_free: (a: number, b: number) => void;
export const compare_runs: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const explorer_channels: (a: number) => number;
export const explorer_height: (a: number) => number;
export const explorer_images: (a: number, b: number, c: number) => [number, number, number, number];
export const explorer_new: (a: number, b: number, c: number) => [number, number, number];
export const explorer_scalars: (a: number, b: number, c: number) => [number, number, number, number];
export const explorer_views: (a: number) => number;
export const explorer_width: (a: number) => number;
export const shuffle_plan: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
