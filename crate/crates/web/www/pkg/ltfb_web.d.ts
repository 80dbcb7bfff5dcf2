/* tslint:disable */
/* eslint-disable */

/**
 * Renders simulator outputs for chosen input parameters.
 */
export class Explorer {
    free(): void;
    [Symbol.dispose](): void;
    channels(): number;
    height(): number;
    images(params: Float64Array): Float32Array;
    constructor(seed: number, preset: string);
    scalars(params: Float64Array): Float32Array;
    views(): number;
    width(): number;
}

export function compare_runs(samples: number, trainers: number, steps: number, interval: number, seed: number): string;

export function shuffle_plan(samples: number, samples_per_file: number, shards: number, batch: number, seed: number, epoch: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_explorer_free: (a: number, b: number) => void;
    readonly compare_runs: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly explorer_channels: (a: number) => number;
    readonly explorer_height: (a: number) => number;
    readonly explorer_images: (a: number, b: number, c: number) => [number, number, number, number];
    readonly explorer_new: (a: number, b: number, c: number) => [number, number, number];
    readonly explorer_scalars: (a: number, b: number, c: number) => [number, number, number, number];
    readonly explorer_views: (a: number) => number;
    readonly explorer_width: (a: number) => number;
    readonly shuffle_plan: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
