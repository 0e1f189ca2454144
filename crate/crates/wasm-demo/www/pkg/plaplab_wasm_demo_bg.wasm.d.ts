/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const annulusSolution: (a: number, b: number) => [number, number, number, number];
export const inequalityScatter: (a: number, b: number, c: number) => [number, number, number, number];
export const thresholdTable: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
