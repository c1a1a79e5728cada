/**
 * Viewer state and its pure reducer.
 *
 * Every transition is a pure function of (state, event); network results
 * enter as events, so the whole interaction is replayable in tests
 * without a browser or a server.
 */

import { Vertex, distance, isSimplePolygon } from "./polygon.js";

export type Target = "right" | "left";
export type JobStatus = "PENDING" | "RUNNING" | "DONE" | "FAILED";

export interface CanvasAnnotation {
  target: Target;
  sliceZ: number;
  vertices: Vertex[];
  closed: boolean;
}

export interface CaseInfo {
  caseId: string;
  dims: [number, number, number];
}

export interface ViewerState {
  caseInfo: CaseInfo | null;
  z: number;
  zoom: number;
  activeTarget: Target | null;
  drafts: Partial<Record<Target, CanvasAnnotation>>;
  uploaded: Record<Target, boolean>;
  warning: string | null;
  banner: string | null;
  activeJobId: string | null;
  jobStatus: JobStatus | null;
  overlayVisible: boolean;
  overlayOpacity: number;
}

export const CLOSE_RADIUS = 8; // image pixels

export function initialState(): ViewerState {
  return {
    caseInfo: null,
    z: 0,
    zoom: 1,
    activeTarget: null,
    drafts: {},
    uploaded: { right: false, left: false },
    warning: null,
    banner: null,
    activeJobId: null,
    jobStatus: null,
    overlayVisible: true,
    overlayOpacity: 0.5,
  };
}

export type ViewerEvent =
  | { kind: "case-loaded"; caseId: string; dims: [number, number, number] }
  | { kind: "slice-delta"; delta: number }
  | { kind: "slice-set"; z: number }
  | { kind: "fetch-failed"; what: string }
  | { kind: "target-selected"; target: Target }
  | { kind: "canvas-click"; x: number; y: number }
  | { kind: "draft-reset"; target: Target }
  | { kind: "annotation-uploaded"; target: Target }
  | { kind: "upload-rejected"; target: Target; message: string }
  | { kind: "segment-started"; jobId: string }
  | { kind: "segment-rejected"; message: string }
  | { kind: "job-status"; status: JobStatus; error?: string }
  | { kind: "overlay-opacity"; value: number }
  | { kind: "overlay-toggle" };

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}

function withDraftClick(state: ViewerState, x: number, y: number): ViewerState {
  if (!state.caseInfo || !state.activeTarget) return state;
  const target = state.activeTarget;
  const existing = state.drafts[target];
  const draft: CanvasAnnotation = existing && !existing.closed
    ? existing
    : { target, sliceZ: state.z, vertices: [], closed: false };
  if (draft.closed) return state;

  // a click near the first vertex closes the outline
  if (draft.vertices.length >= 3 &&
      distance(draft.vertices[0], [x, y]) <= CLOSE_RADIUS) {
    const closed = { ...draft, closed: true };
    const warning = isSimplePolygon(closed.vertices)
      ? null
      : "outline crosses itself; redraw before uploading";
    return {
      ...state,
      drafts: { ...state.drafts, [target]: closed },
      warning,
    };
  }
  const vertices = [...draft.vertices, [x, y] as Vertex];
  return {
    ...state,
    drafts: { ...state.drafts, [target]: { ...draft, vertices, sliceZ: state.z } },
    uploaded: { ...state.uploaded, [target]: false },
    warning: null,
  };
}

export function reduce(state: ViewerState, event: ViewerEvent): ViewerState {
  switch (event.kind) {
    case "case-loaded":
      return {
        ...initialState(),
        caseInfo: { caseId: event.caseId, dims: event.dims },
        z: Math.floor(event.dims[2] / 2),
        overlayOpacity: state.overlayOpacity,
      };
    case "slice-delta": {
      if (!state.caseInfo) return state;
      const nz = state.caseInfo.dims[2];
      return { ...state, z: clamp(state.z + event.delta, 0, nz - 1) };
    }
    case "slice-set": {
      if (!state.caseInfo) return state;
      const nz = state.caseInfo.dims[2];
      return { ...state, z: clamp(event.z, 0, nz - 1) };
    }
    case "fetch-failed":
      return { ...state, banner: `request failed: ${event.what}` };
    case "target-selected":
      return { ...state, activeTarget: event.target, warning: null };
    case "canvas-click":
      return withDraftClick(state, event.x, event.y);
    case "draft-reset": {
      const drafts = { ...state.drafts };
      delete drafts[event.target];
      return {
        ...state,
        drafts,
        uploaded: { ...state.uploaded, [event.target]: false },
        warning: null,
      };
    }
    case "annotation-uploaded":
      return {
        ...state,
        uploaded: { ...state.uploaded, [event.target]: true },
        banner: null,
      };
    case "upload-rejected":
      return { ...state, banner: event.message };
    case "segment-started":
      return { ...state, activeJobId: event.jobId, jobStatus: "PENDING", banner: null };
    case "segment-rejected":
      return { ...state, banner: event.message };
    case "job-status":
      return {
        ...state,
        jobStatus: event.status,
        banner: event.status === "FAILED"
          ? `segmentation failed: ${event.error ?? "unknown error"}`
          : state.banner,
      };
    case "overlay-opacity":
      return { ...state, overlayOpacity: clamp(event.value, 0, 1) };
    case "overlay-toggle":
      return { ...state, overlayVisible: !state.overlayVisible };
  }
}

/** The outline for `target` is complete, simple and ready for upload. */
export function uploadable(state: ViewerState, target: Target): boolean {
  const draft = state.drafts[target];
  return !!draft && draft.closed && draft.vertices.length >= 3 &&
    isSimplePolygon(draft.vertices);
}

/** Segmentation is allowed once both outlines are uploaded (mirrors the
 * server's 409 precondition). */
export function canSegment(state: ViewerState): boolean {
  return state.uploaded.right && state.uploaded.left &&
    state.jobStatus !== "PENDING" && state.jobStatus !== "RUNNING";
}

export function annotationPayload(draft: CanvasAnnotation): string {
  return JSON.stringify({
    target: draft.target,
    slice_z: draft.sliceZ,
    polygon: draft.vertices.map(([x, y]) => [x, y]),
  });
}
