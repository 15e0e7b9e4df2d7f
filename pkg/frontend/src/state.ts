import type { CaseDetail, Decision, Region, Verdict } from "./types.js";

// All verdict logic lives in the service; this module only tracks what the
// service last told us and decides when a request is worth sending.

export interface ViewState {
  caseId: string | null;
  regions: Region[];
  count: number;
  threshold: number;
  verdict: Verdict | null;
  revision: number;
  overlayOpacity: number;
  zoom: number;
  panX: number;
  panY: number;
  selectedRegion: number | null;
  pendingRegions: Set<number>; // toggles in flight, block double-sends
}

export function initialState(): ViewState {
  return {
    caseId: null,
    regions: [],
    count: 0,
    threshold: 0,
    verdict: null,
    revision: 0,
    overlayOpacity: 0.45,
    zoom: 1,
    panX: 0,
    panY: 0,
    selectedRegion: null,
    pendingRegions: new Set(),
  };
}

export function loadCase(state: ViewState, detail: CaseDetail): ViewState {
  return {
    ...state,
    caseId: detail.report.id,
    regions: detail.regions.map((r) => ({ ...r })),
    count: detail.decision.count,
    threshold: detail.decision.threshold,
    verdict: detail.decision.verdict,
    revision: detail.decision.revision,
    selectedRegion: null,
    pendingRegions: new Set(),
  };
}

/** Fold a service decision into the view; never recompute the verdict locally. */
export function applyDecision(state: ViewState, decision: Decision): ViewState {
  return {
    ...state,
    count: decision.count,
    threshold: decision.threshold,
    verdict: decision.verdict,
    revision: decision.revision,
  };
}

export function setRegionIncluded(state: ViewState, regionId: number, included: boolean): ViewState {
  return {
    ...state,
    regions: state.regions.map((r) => (r.id === regionId ? { ...r, included } : r)),
  };
}

export function regionById(state: ViewState, regionId: number): Region | undefined {
  return state.regions.find((r) => r.id === regionId);
}

/** A threshold PUT is only worth sending for a changed, valid value. */
export function shouldSendThreshold(state: ViewState, next: number): boolean {
  return Number.isInteger(next) && next >= 0 && next !== state.threshold;
}

/**
 * After a mutation the service reports its revision. Anything other than
 * exactly one step ahead means another client moved the case: refetch.
 */
export function needsRefetch(previousRevision: number, responseRevision: number): boolean {
  return responseRevision !== previousRevision + 1;
}

export function badgeLabel(state: ViewState): string {
  if (state.verdict === null) return "…";
  return state.verdict === "positive" ? "POSITIVE" : "NEGATIVE";
}

export function hitRegion(state: ViewState, x: number, y: number): Region | null {
  // smallest bbox wins so nested hits pick the tighter region
  let best: Region | null = null;
  for (const region of state.regions) {
    const [bx, by, bw, bh] = region.bbox;
    if (x >= bx && x < bx + bw && y >= by && y < by + bh) {
      if (best === null || bw * bh < best.bbox[2] * best.bbox[3]) {
        best = region;
      }
    }
  }
  return best;
}
