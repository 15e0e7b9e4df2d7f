import { ReviewApi } from "./api.js";
import {
  applyDecision,
  badgeLabel,
  hitRegion,
  initialState,
  loadCase,
  needsRefetch,
  regionById,
  setRegionIncluded,
  shouldSendThreshold,
  type ViewState,
} from "./state.js";
import { canvasToImage, prepareBitmaps, renderCase, type CaseBitmaps } from "./render.js";

const api = new ReviewApi();

let state: ViewState = initialState();
let bitmaps: CaseBitmaps | null = null;

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const caseList = document.getElementById("case-list") as HTMLUListElement;
const regionList = document.getElementById("region-list") as HTMLUListElement;
const badge = document.getElementById("verdict-badge") as HTMLSpanElement;
const countLabel = document.getElementById("count-label") as HTMLSpanElement;
const thresholdSlider = document.getElementById("threshold") as HTMLInputElement;
const thresholdLabel = document.getElementById("threshold-label") as HTMLSpanElement;
const opacitySlider = document.getElementById("opacity") as HTMLInputElement;
const notice = document.getElementById("notice") as HTMLDivElement;

function showNotice(message: string): void {
  notice.textContent = message;
  notice.classList.add("visible");
  window.setTimeout(() => notice.classList.remove("visible"), 3500);
}

function redraw(): void {
  if (bitmaps) renderCase(canvas, bitmaps, state);
}

function syncControls(): void {
  badge.textContent = badgeLabel(state);
  badge.className = `badge ${state.verdict ?? ""}`;
  countLabel.textContent = `${state.count} cord${state.count === 1 ? "" : "s"}`;
  thresholdSlider.value = String(state.threshold);
  thresholdLabel.textContent = String(state.threshold);
  renderRegionList();
}

function renderRegionList(): void {
  regionList.replaceChildren(
    ...state.regions.map((region) => {
      const item = document.createElement("li");
      item.className = region.included ? "" : "excluded";
      if (state.selectedRegion === region.id) item.classList.add("selected");

      const checkbox = document.createElement("input");
      checkbox.type = "checkbox";
      checkbox.checked = region.included;
      checkbox.disabled = state.pendingRegions.has(region.id);
      checkbox.addEventListener("change", () => {
        void toggleRegion(region.id, checkbox.checked);
      });

      const label = document.createElement("span");
      label.textContent = `#${region.id}  ${region.area}px`;
      label.addEventListener("click", () => {
        state = { ...state, selectedRegion: region.id };
        syncControls();
        redraw();
      });

      item.append(checkbox, label);
      return item;
    }),
  );
}

async function refreshCaseList(): Promise<void> {
  const cases = await api.listCases();
  caseList.replaceChildren(
    ...cases.map((summary) => {
      const item = document.createElement("li");
      if (summary.id === state.caseId) item.classList.add("selected");
      item.innerHTML = `<span class="case-id">${summary.id}</span>
        <span class="badge ${summary.verdict}">${summary.count}</span>`;
      item.addEventListener("click", () => void selectCase(summary.id));
      return item;
    }),
  );
}

async function selectCase(id: string): Promise<void> {
  try {
    const [detail, image, mask] = await Promise.all([
      api.getCase(id),
      api.fetchPgm(id, "image"),
      api.fetchPgm(id, "mask"),
    ]);
    state = loadCase(state, detail);
    bitmaps = prepareBitmaps(image, mask);
    fitToCanvas(image.width, image.height);
    syncControls();
    redraw();
    void refreshCaseList();
  } catch (err) {
    showNotice(`failed to load case: ${(err as Error).message}`);
  }
}

function fitToCanvas(width: number, height: number): void {
  const scale = Math.min(canvas.width / width, canvas.height / height, 4);
  state = {
    ...state,
    zoom: scale,
    panX: (canvas.width - width * scale) / 2,
    panY: (canvas.height - height * scale) / 2,
  };
}

async function refetchCase(): Promise<void> {
  if (state.caseId) await selectCase(state.caseId);
}

async function toggleRegion(regionId: number, included: boolean): Promise<void> {
  const caseId = state.caseId;
  const region = regionById(state, regionId);
  if (!caseId || !region || state.pendingRegions.has(regionId)) return;
  const before = region.included;
  const previousRevision = state.revision;

  state.pendingRegions.add(regionId);
  state = setRegionIncluded(state, regionId, included);
  syncControls();
  redraw();
  try {
    const decision = await api.setRegionIncluded(caseId, regionId, included);
    state.pendingRegions.delete(regionId);
    state = applyDecision(state, decision);
    if (needsRefetch(previousRevision, decision.revision)) {
      await refetchCase();
      return;
    }
  } catch (err) {
    // service refused or unreachable: revert the toggle, tell the reviewer
    state.pendingRegions.delete(regionId);
    state = setRegionIncluded(state, regionId, before);
    showNotice(`could not update region #${regionId}: ${(err as Error).message}`);
  }
  syncControls();
  redraw();
}

async function changeThreshold(next: number): Promise<void> {
  const caseId = state.caseId;
  if (!caseId || !shouldSendThreshold(state, next)) {
    thresholdSlider.value = String(state.threshold);
    return;
  }
  const previousRevision = state.revision;
  try {
    const decision = await api.setThreshold(caseId, next);
    state = applyDecision(state, decision);
    if (needsRefetch(previousRevision, decision.revision)) {
      await refetchCase();
      return;
    }
  } catch (err) {
    showNotice(`could not move threshold: ${(err as Error).message}`);
  }
  syncControls();
}

thresholdSlider.addEventListener("change", () => {
  void changeThreshold(Number(thresholdSlider.value));
});
thresholdSlider.addEventListener("input", () => {
  thresholdLabel.textContent = thresholdSlider.value;
});

opacitySlider.addEventListener("input", () => {
  state = { ...state, overlayOpacity: Number(opacitySlider.value) / 100 };
  redraw();
});

canvas.addEventListener("click", (event) => {
  const rect = canvas.getBoundingClientRect();
  const point = canvasToImage(state, event.clientX - rect.left, event.clientY - rect.top);
  const region = hitRegion(state, point.x, point.y);
  state = { ...state, selectedRegion: region ? region.id : null };
  syncControls();
  redraw();
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  const rect = canvas.getBoundingClientRect();
  const cx = event.clientX - rect.left;
  const cy = event.clientY - rect.top;
  const factor = event.deltaY < 0 ? 1.2 : 1 / 1.2;
  const zoom = Math.min(16, Math.max(0.1, state.zoom * factor));
  // keep the pixel under the cursor fixed while zooming
  const image = canvasToImage(state, cx, cy);
  state = {
    ...state,
    zoom,
    panX: cx - image.x * zoom,
    panY: cy - image.y * zoom,
  };
  redraw();
});

let dragging: { x: number; y: number } | null = null;
canvas.addEventListener("mousedown", (event) => {
  dragging = { x: event.clientX - state.panX, y: event.clientY - state.panY };
});
window.addEventListener("mousemove", (event) => {
  if (!dragging) return;
  state = { ...state, panX: event.clientX - dragging.x, panY: event.clientY - dragging.y };
  redraw();
});
window.addEventListener("mouseup", () => {
  dragging = null;
});

async function start(): Promise<void> {
  try {
    await refreshCaseList();
    const cases = await api.listCases();
    if (cases.length > 0) await selectCase(cases[0].id);
  } catch (err) {
    showNotice(`service unreachable: ${(err as Error).message}`);
  }
}

void start();
