/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_inspect: (a: number, b: number, c: number) => [number, number];
export const demo_new: (a: bigint) => number;
export const demo_stages: (a: number) => number;
export const demo_steps: (a: number) => number;
export const demo_subnets: (a: number) => [number, number];
export const demo_train_steps: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
