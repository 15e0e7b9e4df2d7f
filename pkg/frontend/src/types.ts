export type Verdict = "positive" | "negative";

export interface Region {
  id: number;
  area: number;
  bbox: [number, number, number, number]; // x, y, w, h
  centroid: [number, number];
  included: boolean;
}

export interface CaseSummary {
  id: string;
  count: number;
  verdict: Verdict;
}

export interface Decision {
  count: number;
  threshold: number;
  verdict: Verdict;
  revision: number;
}

export interface CaseReport {
  id: string;
  width: number;
  height: number;
  tile: number;
  grid: [number, number];
  regions: Region[];
  count: number;
  threshold: number;
  verdict: Verdict;
  model_crc: number;
  mask: string;
}

export interface CaseDetail {
  report: CaseReport;
  session: {
    threshold: number;
    overrides: Record<string, boolean>;
    note: string;
    revision: number;
  };
  regions: Region[]; // report regions with session overrides applied
  decision: Decision;
}

export interface PgmImage {
  width: number;
  height: number;
  pixels: Uint8Array; // row-major grayscale
}
