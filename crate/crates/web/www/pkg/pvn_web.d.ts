/* tslint:disable */
/* eslint-disable */

/**
 * Exact gradient ascent from `(p1, p2)`: `[p1, p2, v1, v2, j]` per step.
 */
export function ascend(p1: number, p2: number, steps: number, lr: number): Float64Array;

/**
 * One episode of a random linear softmax policy: `[x, theta]` per visited
 * state. The episode length is the return.
 */
export function cartpole_episode(seed: bigint, temperature: number): Float64Array;

/**
 * Exact gradient of `J` on a `resolution x resolution` grid of cell centres
 * in policy space: `[p1, p2, g1, g2]` per cell.
 */
export function gradient_field(resolution: number): Float64Array;

/**
 * Values of `count` random policies of the two-state MDP:
 * `[v1, v2, j]` per policy.
 */
export function sample_polytope(count: number, seed: bigint): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly ascend: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly cartpole_episode: (a: bigint, b: number) => [number, number, number, number];
    readonly gradient_field: (a: number) => [number, number, number, number];
    readonly sample_polytope: (a: number, b: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
