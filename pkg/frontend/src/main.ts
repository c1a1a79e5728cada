/** DOM wiring: one canvas, slice scrolling, two outline targets, the
 * segment button and the overlay controls. All logic lives in the pure
 * reducer; this file only translates DOM events and fetch results into
 * viewer events and repaints. */

import { ApiClient, ApiError, SliceCache, pollJob } from "./api.js";
import {
  CanvasAnnotation,
  Target,
  ViewerState,
  annotationPayload,
  canSegment,
  initialState,
  reduce,
  uploadable,
  ViewerEvent,
} from "./state.js";

const api = new ApiClient("");
const slices = new SliceCache((c, z) => api.getSliceBlob(c, z));

let state: ViewerState = initialState();
const bitmaps = new Map<string, ImageBitmap>();
const overlays = new Map<string, ImageBitmap>();

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const caseSelect = document.getElementById("case-select") as HTMLSelectElement;
const sliceLabel = document.getElementById("slice-label")!;
const banner = document.getElementById("banner")!;
const warning = document.getElementById("warning")!;
const jobLabel = document.getElementById("job-label")!;
const segmentButton = document.getElementById("segment") as HTMLButtonElement;
const opacitySlider = document.getElementById("opacity") as HTMLInputElement;
const overlayToggle = document.getElementById("overlay-toggle") as HTMLInputElement;
const uploadButtons: Record<Target, HTMLButtonElement> = {
  right: document.getElementById("upload-right") as HTMLButtonElement,
  left: document.getElementById("upload-left") as HTMLButtonElement,
};
const targetButtons: Record<Target, HTMLButtonElement> = {
  right: document.getElementById("target-right") as HTMLButtonElement,
  left: document.getElementById("target-left") as HTMLButtonElement,
};

function dispatch(event: ViewerEvent): void {
  state = reduce(state, event);
  void repaint();
}

async function sliceBitmap(caseId: string, z: number): Promise<ImageBitmap | null> {
  const key = `${caseId}/${z}`;
  if (!bitmaps.has(key)) {
    try {
      const blob = await slices.get(caseId, z);
      bitmaps.set(key, await createImageBitmap(blob));
    } catch (err) {
      dispatch({ kind: "fetch-failed", what: `slice ${z}` });
      return null;
    }
  }
  return bitmaps.get(key)!;
}

async function overlayBitmap(caseId: string, z: number): Promise<ImageBitmap | null> {
  const key = `${caseId}/${z}`;
  if (!overlays.has(key)) {
    try {
      const blob = await api.getOverlayBlob(caseId, z);
      overlays.set(key, await createImageBitmap(blob));
    } catch {
      return null; // no prediction yet
    }
  }
  return overlays.get(key)!;
}

function drawPolygon(draft: CanvasAnnotation, scale: number, color: string): void {
  if (draft.vertices.length === 0) return;
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(draft.vertices[0][0] * scale, draft.vertices[0][1] * scale);
  for (const [x, y] of draft.vertices.slice(1)) {
    ctx.lineTo(x * scale, y * scale);
  }
  if (draft.closed) ctx.closePath();
  ctx.stroke();
  for (const [x, y] of draft.vertices) {
    ctx.beginPath();
    ctx.arc(x * scale, y * scale, 3, 0, 2 * Math.PI);
    ctx.fill();
  }
}

async function repaint(): Promise<void> {
  banner.textContent = state.banner ?? "";
  warning.textContent = state.warning ?? "";
  jobLabel.textContent = state.jobStatus ? `job: ${state.jobStatus}` : "";
  segmentButton.disabled = !canSegment(state) || !state.caseInfo;
  for (const target of ["right", "left"] as Target[]) {
    uploadButtons[target].disabled = !uploadable(state, target);
    targetButtons[target].classList.toggle("active", state.activeTarget === target);
    targetButtons[target].classList.toggle("uploaded", state.uploaded[target]);
  }
  if (!state.caseInfo) return;
  const { caseId, dims } = state.caseInfo;
  sliceLabel.textContent = `slice ${state.z} / ${dims[2] - 1}`;

  const scale = state.zoom * Math.min(canvas.width / dims[0], canvas.height / dims[1]);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const base = await sliceBitmap(caseId, state.z);
  if (base) {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(base, 0, 0, dims[0] * scale, dims[1] * scale);
  }
  if (state.overlayVisible && state.jobStatus === "DONE") {
    const over = await overlayBitmap(caseId, state.z);
    if (over) {
      ctx.globalAlpha = state.overlayOpacity;
      ctx.drawImage(over, 0, 0, dims[0] * scale, dims[1] * scale);
      ctx.globalAlpha = 1;
    }
  }
  const colors: Record<Target, string> = { right: "#ff4040", left: "#4060ff" };
  for (const target of ["right", "left"] as Target[]) {
    const draft = state.drafts[target];
    if (draft && draft.sliceZ === state.z) {
      drawPolygon(draft, scale, colors[target]);
    }
  }
}

function canvasToImage(eventX: number, eventY: number): [number, number] | null {
  if (!state.caseInfo) return null;
  const dims = state.caseInfo.dims;
  const rect = canvas.getBoundingClientRect();
  const scale = state.zoom * Math.min(canvas.width / dims[0], canvas.height / dims[1]);
  const x = (eventX - rect.left) * (canvas.width / rect.width) / scale;
  const y = (eventY - rect.top) * (canvas.height / rect.height) / scale;
  if (x < 0 || y < 0 || x >= dims[0] || y >= dims[1]) return null;
  return [x, y];
}

async function uploadAnnotation(target: Target): Promise<void> {
  const draft = state.drafts[target];
  if (!draft || !state.caseInfo || !uploadable(state, target)) return;
  try {
    await api.putAnnotation(state.caseInfo.caseId, target, annotationPayload(draft));
    dispatch({ kind: "annotation-uploaded", target });
  } catch (err) {
    const message = err instanceof ApiError ? err.detail : String(err);
    dispatch({ kind: "upload-rejected", target, message });
  }
}

async function runSegmentation(): Promise<void> {
  if (!state.caseInfo || !canSegment(state)) return;
  const caseId = state.caseInfo.caseId;
  try {
    const job = await api.startSegmentation(caseId);
    dispatch({ kind: "segment-started", jobId: job.job_id });
    const done = await pollJob(api, job.job_id);
    overlays.clear(); // new prediction invalidates cached overlays
    dispatch({ kind: "job-status", status: done.status, error: done.error ?? undefined });
  } catch (err) {
    const message = err instanceof ApiError ? err.detail : String(err);
    dispatch({ kind: "segment-rejected", message });
  }
}

async function loadCase(caseId: string, dims: [number, number, number]): Promise<void> {
  bitmaps.clear();
  overlays.clear();
  slices.clear();
  dispatch({ kind: "case-loaded", caseId, dims });
}

async function boot(): Promise<void> {
  const cases = await api.listCases();
  for (const c of cases) {
    const option = document.createElement("option");
    option.value = c.case_id;
    option.textContent = c.case_id;
    caseSelect.appendChild(option);
  }
  caseSelect.addEventListener("change", () => {
    const selected = cases.find((c) => c.case_id === caseSelect.value);
    if (selected) void loadCase(selected.case_id, selected.dims);
  });
  if (cases.length > 0) {
    caseSelect.value = cases[0].case_id;
    await loadCase(cases[0].case_id, cases[0].dims);
  }

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    dispatch({ kind: "slice-delta", delta: ev.deltaY > 0 ? 1 : -1 });
  });
  canvas.addEventListener("click", (ev) => {
    const point = canvasToImage(ev.clientX, ev.clientY);
    if (point) dispatch({ kind: "canvas-click", x: point[0], y: point[1] });
  });
  window.addEventListener("keydown", (ev) => {
    if (ev.key === "ArrowUp") dispatch({ kind: "slice-delta", delta: 1 });
    if (ev.key === "ArrowDown") dispatch({ kind: "slice-delta", delta: -1 });
  });
  for (const target of ["right", "left"] as Target[]) {
    targetButtons[target].addEventListener("click", () =>
      dispatch({ kind: "target-selected", target }));
    uploadButtons[target].addEventListener("click", () => void uploadAnnotation(target));
    document.getElementById(`reset-${target}`)!.addEventListener("click", () =>
      dispatch({ kind: "draft-reset", target }));
  }
  segmentButton.addEventListener("click", () => void runSegmentation());
  opacitySlider.addEventListener("input", () =>
    dispatch({ kind: "overlay-opacity", value: Number(opacitySlider.value) }));
  overlayToggle.addEventListener("change", () =>
    dispatch({ kind: "overlay-toggle" }));
}

void boot();
