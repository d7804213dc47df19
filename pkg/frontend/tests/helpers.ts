// Mock service fixtures. The "symmetric bundle" serves 0.5 everywhere, the
// "skewed bundle" serves distinct, reproducible values per grid point.

import { vi } from "vitest";
import type { PredictRequestBody, TrajectoryResponse } from "../src/api.js";

export const GRID: number[] = Array.from({ length: 61 }, (_, i) => i * 5);

export function symmetricTrajectory(): TrajectoryResponse {
  const flat = GRID.map(() => 0.5);
  return {
    t_min: [...GRID],
    level: 0.95,
    model_id: "sym-test",
    not_yet: { p_mean: [...flat], p_low: [...flat], p_high: [...flat] },
    voided_at: { p_mean: [...flat], p_low: [...flat], p_high: [...flat] },
  };
}

export function skewedTrajectory(): TrajectoryResponse {
  const mean = (i: number, off: number) => 0.3 + 0.004 * i + off;
  const mk = (off: number) => ({
    p_mean: GRID.map((_, i) => mean(i, off)),
    p_low: GRID.map((_, i) => mean(i, off) - 0.05),
    p_high: GRID.map((_, i) => mean(i, off) + 0.05),
  });
  return {
    t_min: [...GRID],
    level: 0.95,
    model_id: "skew-test",
    not_yet: mk(0),
    voided_at: mk(0.1),
  };
}

export interface MockService {
  fetchMock: ReturnType<typeof vi.fn>;
  calls: { url: string; body?: PredictRequestBody }[];
}

export function installMockService(options: {
  trajectory: TrajectoryResponse;
  predict?: (body: PredictRequestBody) => Record<string, unknown>;
  failNetwork?: boolean;
}): MockService {
  const calls: { url: string; body?: PredictRequestBody }[] = [];
  const defaultPredict = () => ({
    p_mean: 0.5, p_low: 0.5, p_high: 0.5, level: 0.95,
    model_id: options.trajectory.model_id,
  });
  const predict = options.predict ?? defaultPredict;
  const fetchMock = vi.fn(async (url: string, init?: RequestInit) => {
    if (options.failNetwork) {
      throw new TypeError("fetch failed");
    }
    if (url.includes("/api/v1/trajectory")) {
      calls.push({ url });
      return jsonResponse(options.trajectory);
    }
    if (url.includes("/api/v1/predict")) {
      const body = JSON.parse(String(init?.body)) as PredictRequestBody;
      calls.push({ url, body });
      const t = "t_min" in body.state ? body.state.t_min : undefined;
      if (t !== undefined && (t < 0 || t > 300)) {
        return jsonResponse({ code: "range", detail: "t out of range" }, 400);
      }
      return jsonResponse(predict(body));
    }
    throw new Error(`unexpected url ${url}`);
  });
  vi.stubGlobal("fetch", fetchMock);
  return { fetchMock, calls };
}

function jsonResponse(payload: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: String(status),
    json: async () => payload,
  } as unknown as Response;
}
