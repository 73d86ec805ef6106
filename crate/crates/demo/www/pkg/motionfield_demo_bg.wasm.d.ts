/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const __wbg_plan_free: (a: number, b: number) => void;
export const demo_bounds: (a: number) => [number, number];
export const demo_new: (a: number, b: number) => [number, number, number];
export const demo_plan: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
export const demo_sdf: (a: number, b: number, c: number) => number;
export const demo_sdfGrid: (a: number, b: number, c: number) => [number, number];
export const plan_accelerations: (a: number) => [number, number];
export const plan_duration: (a: number) => number;
export const plan_is_empty: (a: number) => number;
export const plan_len: (a: number) => number;
export const plan_positions: (a: number) => [number, number];
export const plan_transport: (a: number, b: bigint, c: number) => [number, number, number, number];
export const plan_velocities: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
