/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const fanout: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const matrix: () => [number, number];
export const packaged_scenarios: () => [number, number];
export const run_scenario_text: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
