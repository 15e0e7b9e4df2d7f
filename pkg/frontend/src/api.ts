import type { CaseDetail, CaseSummary, Decision, PgmImage } from "./types.js";
import { parsePgm } from "./pgm.js";

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body, keep the status text
    }
    throw new Error(`service error: ${detail}`);
  }
  return (await response.json()) as T;
}

export class ReviewApi {
  constructor(private readonly base: string = "") {}

  listCases(): Promise<CaseSummary[]> {
    return fetch(`${this.base}/api/cases`).then((r) => asJson<CaseSummary[]>(r));
  }

  getCase(id: string): Promise<CaseDetail> {
    return fetch(`${this.base}/api/cases/${id}`).then((r) => asJson<CaseDetail>(r));
  }

  getDecision(id: string): Promise<Decision> {
    return fetch(`${this.base}/api/cases/${id}/decision`).then((r) => asJson<Decision>(r));
  }

  setRegionIncluded(id: string, regionId: number, included: boolean): Promise<Decision> {
    return fetch(`${this.base}/api/cases/${id}/regions/${regionId}`, {
      method: "PATCH",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ included }),
    }).then((r) => asJson<Decision>(r));
  }

  setThreshold(id: string, threshold: number): Promise<Decision> {
    return fetch(`${this.base}/api/cases/${id}/threshold`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ threshold }),
    }).then((r) => asJson<Decision>(r));
  }

  async fetchPgm(id: string, kind: "image" | "mask"): Promise<PgmImage> {
    const response = await fetch(`${this.base}/api/cases/${id}/${kind}`);
    if (!response.ok) {
      throw new Error(`service error: ${response.status}`);
    }
    return parsePgm(await response.arrayBuffer());
  }
}
