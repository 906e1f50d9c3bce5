/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Accuracy, cost and per-block residual ratios of one skip string.
     */
    inspect(skip: string): string;
    /**
     * Fresh network and data for `seed`.
     */
    constructor(seed: bigint);
    /**
     * Every sub-network with FLOPs, parameters, accuracy and Pareto flag,
     * sorted by FLOPs.
     */
    subnets(): string;
    /**
     * Runs `n` two-pass training steps; returns their losses and the
     * super-net and base-net accuracy afterwards.
     */
    train_steps(n: number): string;
    readonly stages: number;
    readonly steps: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_inspect: (a: number, b: number, c: number) => [number, number];
    readonly demo_new: (a: bigint) => number;
    readonly demo_stages: (a: number) => number;
    readonly demo_steps: (a: number) => number;
    readonly demo_subnets: (a: number) => [number, number];
    readonly demo_train_steps: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
