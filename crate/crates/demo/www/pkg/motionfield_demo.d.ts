/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[x_min, y_min, x_max, y_max]`
     */
    bounds(): Float64Array;
    constructor(world: string);
    /**
     * Returns `undefined` when no collision-free plan was found.
     */
    plan(sx: number, sy: number, gx: number, gy: number, seed: bigint): Plan | undefined;
    sdfGrid(nx: number, ny: number): Float64Array;
    sdf(x: number, y: number): number;
}

/**
 * Expert plan profiles handed to the page, each flattened `row × axis`.
 */
export class Plan {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    accelerations(): Float64Array;
    duration(): number;
    is_empty(): boolean;
    len(): number;
    positions(): Float64Array;
    /**
     * Flow frames from noise (`seed`) to this plan.
     */
    transport(seed: bigint, steps: number): Float64Array;
    velocities(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly __wbg_plan_free: (a: number, b: number) => void;
    readonly demo_bounds: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_plan: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly demo_sdf: (a: number, b: number, c: number) => number;
    readonly demo_sdfGrid: (a: number, b: number, c: number) => [number, number];
    readonly plan_accelerations: (a: number) => [number, number];
    readonly plan_duration: (a: number) => number;
    readonly plan_is_empty: (a: number) => number;
    readonly plan_len: (a: number) => number;
    readonly plan_positions: (a: number) => [number, number];
    readonly plan_transport: (a: number, b: bigint, c: number) => [number, number, number, number];
    readonly plan_velocities: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
