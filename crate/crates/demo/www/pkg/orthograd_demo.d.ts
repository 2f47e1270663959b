/* tslint:disable */
/* eslint-disable */

/**
 * Gradient descent and plain orthogonalized descent on the same random 2-D
 * quadratic, started from the same point. `eta_frac` is the step as a
 * fraction of `1/k`.
 */
export function quadratic_trajectories(seed: number, eta_frac: number, steps: number, x0: number, y0: number): string;

/**
 * Draws logits whose softmax is the true label distribution, multiplies them
 * by `inflate` to make the model over- or under-confident, fits a
 * temperature on half of the samples and reports the other half.
 */
export function temperature_demo(seed: number, n: number, classes: number, inflate: number, bins: number): string;

/**
 * Trains a small MLP on two moons with the chosen optimizer
 * (`sgd`, `perp_renorm` or `perp_plain`) and returns its decision surface.
 */
export function two_moons_regions(seed: number, variant: string, epochs: number, eta: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly quadratic_trajectories: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly temperature_demo: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly two_moons_regions: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
