/* tslint:disable */
/* eslint-disable */

export class Session {
    free(): void;
    [Symbol.dispose](): void;
    bilinear(): Float64Array;
    /**
     * Radial error spectra: shells `0..m` for the last super-resolution,
     * then `m..2m` for bilinear.
     */
    error_spectra(): Float64Array;
    ground_truth(): Float64Array;
    iterations(): number;
    /**
     * LR input, `n/2 × n/2`.
     */
    low_res(): Float64Array;
    /**
     * `n×n` fields with energy spectrum `∝ k^slope`; `n` must be a multiple
     * of 8.
     */
    constructor(n: number, slope: number, seed: bigint);
    /**
     * Replaces the ground truth with a fresh draw; the model is kept.
     */
    regenerate(seed: bigint): void;
    /**
     * `[rmse of last super-resolution, rmse of bilinear]`.
     */
    rmse(): Float64Array;
    size(): number;
    /**
     * Super-resolves the LR input in `nfe` reverse steps.
     */
    super_resolve(nfe: number, seed: bigint): Float64Array;
    /**
     * Runs `count` more training iterations on a fixed set of generated
     * fields and returns their losses.
     */
    train(count: number): Float64Array;
}

/**
 * Radial power spectrum of a row-major `n×n` field, one value per shell.
 */
export function radial_spectrum(values: Float64Array, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_session_free: (a: number, b: number) => void;
    readonly radial_spectrum: (a: number, b: number, c: number) => [number, number, number, number];
    readonly session_bilinear: (a: number) => [number, number, number, number];
    readonly session_error_spectra: (a: number) => [number, number, number, number];
    readonly session_ground_truth: (a: number) => [number, number];
    readonly session_iterations: (a: number) => number;
    readonly session_low_res: (a: number) => [number, number];
    readonly session_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly session_regenerate: (a: number, b: bigint) => [number, number];
    readonly session_rmse: (a: number) => [number, number, number, number];
    readonly session_size: (a: number) => number;
    readonly session_super_resolve: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly session_train: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
