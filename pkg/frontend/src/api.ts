// Typed client for the risk service. Every successful response is appended to
// `log`, so the UI can prove each rendered number came from the wire.
// In-flight requests are cancelled latest-wins per endpoint.

export interface PredictResponse {
  p_mean: number;
  p_low: number;
  p_high: number;
  level: number;
  model_id: string;
}

export interface TrajectoryBranch {
  p_mean: number[];
  p_low: number[];
  p_high: number[];
}

export interface TrajectoryResponse {
  t_min: number[];
  level: number;
  model_id: string;
  not_yet: TrajectoryBranch;
  voided_at: TrajectoryBranch;
}

export interface CurveResponse {
  t_min: number[];
  observed: number[];
  post_mean: number[];
  band_low: number[];
  band_high: number[];
  level: number;
  n1: number;
  model_id: string;
}

export type EvidenceStateBody =
  | { kind: "voided_at" | "not_yet"; t_min: number }
  | { kind: "not_observed" | "voided_censored" };

export interface PredictRequestBody {
  age_years?: number;
  sex?: "F" | "M";
  state: EvidenceStateBody;
}

export interface ApiCallRecord {
  endpoint: string;
  request: unknown;
  response: unknown;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    detail: string,
  ) {
    super(detail);
  }
}

const API_PREFIX = "/api/v1";

export class ApiClient {
  readonly log: ApiCallRecord[] = [];
  private aborters = new Map<string, AbortController>();

  constructor(private readonly base: string = "") {}

  get callCount(): number {
    return this.log.length;
  }

  private async request<T>(
    endpoint: string,
    path: string,
    init: RequestInit,
    requestBody: unknown,
  ): Promise<T> {
    this.aborters.get(endpoint)?.abort();
    const aborter = new AbortController();
    this.aborters.set(endpoint, aborter);
    const resp = await fetch(this.base + path, { ...init, signal: aborter.signal });
    const body = await resp.json();
    if (!resp.ok) {
      const code = typeof body?.code === "string" ? body.code : "unknown";
      const detail = typeof body?.detail === "string" ? body.detail : resp.statusText;
      throw new ApiError(resp.status, code, detail);
    }
    this.log.push({ endpoint, request: requestBody, response: body });
    return body as T;
  }

  predict(body: PredictRequestBody): Promise<PredictResponse> {
    return this.request<PredictResponse>(
      "predict",
      `${API_PREFIX}/predict`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
      body,
    );
  }

  trajectory(ageYears?: number, sex?: "F" | "M"): Promise<TrajectoryResponse> {
    const params = new URLSearchParams();
    if (ageYears !== undefined) params.set("age", String(ageYears));
    if (sex !== undefined) params.set("sex", sex);
    const qs = params.toString();
    return this.request<TrajectoryResponse>(
      "trajectory",
      `${API_PREFIX}/trajectory${qs ? "?" + qs : ""}`,
      { method: "GET" },
      { age: ageYears, sex },
    );
  }

  curve(): Promise<CurveResponse> {
    return this.request<CurveResponse>(
      "curve",
      `${API_PREFIX}/curve`,
      { method: "GET" },
      {},
    );
  }

  meta(): Promise<Record<string, unknown>> {
    return this.request("meta", `${API_PREFIX}/meta`, { method: "GET" }, {});
  }
}
