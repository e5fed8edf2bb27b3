/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_session_free: (a: number, b: number) => void;
export const radial_spectrum: (a: number, b: number, c: number) => [number, number, number, number];
export const session_bilinear: (a: number) => [number, number, number, number];
export const session_error_spectra: (a: number) => [number, number, number, number];
export const session_ground_truth: (a: number) => [number, number];
export const session_iterations: (a: number) => number;
export const session_low_res: (a: number) => [number, number];
export const session_new: (a: number, b: number, c: bigint) => [number, number, number];
export const session_regenerate: (a: number, b: bigint) => [number, number];
export const session_rmse: (a: number) => [number, number, number, number];
export const session_size: (a: number) => number;
export const session_super_resolve: (a: number, b: number, c: bigint) => [number, number, number, number];
export const session_train: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
