// Session state for one patient encounter. The elapsed clock is client-side
// with a manual arrival override; evidence freezes at the 300-minute cap.

export const ELAPSED_CAP_MIN = 300;

export type Mode = "live" | "what_if";

export interface SessionState {
  arrivalStartMs: number;
  ageYears?: number;
  sex?: "F" | "M";
  voidedAtMin?: number;
  mode: Mode;
  whatIfMin: number;
}

export function newSession(nowMs: number): SessionState {
  return { arrivalStartMs: nowMs, mode: "live", whatIfMin: 0 };
}

export function elapsedMin(state: SessionState, nowMs: number): number {
  const raw = (nowMs - state.arrivalStartMs) / 60000;
  return Math.min(Math.max(raw, 0), ELAPSED_CAP_MIN);
}

export function withArrivalOverride(state: SessionState, arrivalMs: number): SessionState {
  return { ...state, arrivalStartMs: arrivalMs };
}

export function withVoidedNow(state: SessionState, nowMs: number): SessionState {
  return { ...state, voidedAtMin: elapsedMin(state, nowMs) };
}

export function withVoidedCleared(state: SessionState): SessionState {
  const next = { ...state };
  delete next.voidedAtMin;
  return next;
}

export function checkInvariants(state: SessionState, nowMs: number): void {
  if (state.voidedAtMin !== undefined) {
    if (state.voidedAtMin > elapsedMin(state, nowMs) + 1e-9) {
      throw new Error("voided time is in the future");
    }
    if (state.voidedAtMin < 0 || state.voidedAtMin > ELAPSED_CAP_MIN) {
      throw new Error("voided time outside [0, 300]");
    }
  }
}

/** Index of the trajectory grid point closest to t (ties go earlier). */
export function nearestGridIndex(grid: number[], t: number): number {
  let best = 0;
  let bestDist = Math.abs(grid[0] - t);
  for (let i = 1; i < grid.length; i++) {
    const d = Math.abs(grid[i] - t);
    if (d < bestDist) {
      best = i;
      bestDist = d;
    }
  }
  return best;
}
