// Clinician-facing risk panel: live gauge with credible band, dual-branch
// trajectory plot, covariate toggles, and a what-if scrubber.
//
// The panel never computes probabilities locally. Every displayed number is
// copied from a logged API response: the live gauge reads either the served
// trajectory at the nearest grid point or the voided-evidence /predict
// response; what-if values come straight from the cached trajectory payload.

import { ApiClient, ApiError, PredictResponse, TrajectoryResponse } from "./api.js";
import {
  ELAPSED_CAP_MIN,
  SessionState,
  checkInvariants,
  elapsedMin,
  nearestGridIndex,
  newSession,
  withVoidedCleared,
  withVoidedNow,
} from "./state.js";

export const RISK_REFERENCE_LINES = [0.2, 0.4];

const PLOT_W = 600;
const PLOT_H = 240;

export function fmtPct(p: number): string {
  return (100 * p).toFixed(1) + "%";
}

export function fmtMin(t: number): string {
  return t.toFixed(0) + " min";
}

interface GaugeValues {
  mean: number;
  low: number;
  high: number;
  source: string;
}

export class RiskPanel {
  state: SessionState;
  trajectory: TrajectoryResponse | null = null;
  lastPredict: PredictResponse | null = null;

  private readonly els: Record<string, HTMLElement> = {};

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly now: () => number = () => Date.now(),
  ) {
    this.state = newSession(this.now());
    this.buildDom();
  }

  // ---------------------------------------------------------------- DOM --
  private buildDom(): void {
    this.root.innerHTML = `
      <div id="status-banner" class="banner hidden"></div>
      <section class="gauge">
        <div id="gauge-value">--</div>
        <div class="band">
          <span id="band-low">--</span><span id="band-high">--</span>
        </div>
        <div id="gauge-source" class="source"></div>
        <div id="elapsed-display"></div>
      </section>
      <section class="controls">
        <label>Age <input id="age-input" type="number" min="0" max="120"></label>
        <span id="age-error" class="field-error"></span>
        <label>Sex
          <select id="sex-select">
            <option value="">unknown</option>
            <option value="F">F</option>
            <option value="M">M</option>
          </select>
        </label>
        <button id="voided-toggle">Voided now</button>
        <button id="mode-toggle">What-if</button>
        <label class="whatif hidden"><input id="whatif-slider" type="range"
          min="0" max="${ELAPSED_CAP_MIN}" step="5" value="0">
          <span id="whatif-readout"></span></label>
      </section>
      <svg id="traj-svg" viewBox="0 0 ${PLOT_W} ${PLOT_H}"
           width="${PLOT_W}" height="${PLOT_H}"></svg>
    `;
    for (const id of ["status-banner", "gauge-value", "band-low", "band-high",
                      "gauge-source", "elapsed-display", "age-input",
                      "age-error", "sex-select", "voided-toggle", "mode-toggle",
                      "whatif-slider", "whatif-readout", "traj-svg"]) {
      const el = this.root.querySelector<HTMLElement>(`#${id}`);
      if (!el) throw new Error(`missing element #${id}`);
      this.els[id] = el;
    }
    this.els["age-input"].addEventListener("change", () => {
      const raw = (this.els["age-input"] as HTMLInputElement).value;
      void this.setAge(raw === "" ? undefined : Number(raw));
    });
    this.els["sex-select"].addEventListener("change", () => {
      const raw = (this.els["sex-select"] as HTMLSelectElement).value;
      void this.setSex(raw === "" ? undefined : (raw as "F" | "M"));
    });
    this.els["voided-toggle"].addEventListener("click", () => {
      void this.toggleVoided();
    });
    this.els["mode-toggle"].addEventListener("click", () => {
      this.setMode(this.state.mode === "live" ? "what_if" : "live");
    });
    this.els["whatif-slider"].addEventListener("input", () => {
      this.scrubWhatIf(Number((this.els["whatif-slider"] as HTMLInputElement).value));
    });
  }

  // ------------------------------------------------------------- actions --
  async init(): Promise<void> {
    await this.refreshTrajectory();
  }

  async setAge(age?: number): Promise<void> {
    this.state = { ...this.state, ageYears: age };
    await this.refreshTrajectory();
  }

  async setSex(sex?: "F" | "M"): Promise<void> {
    this.state = { ...this.state, sex };
    await this.refreshTrajectory();
  }

  /** Toggle voided evidence at the current elapsed time (one /predict call). */
  async toggleVoided(): Promise<void> {
    const nowMs = this.now();
    if (this.state.voidedAtMin === undefined) {
      this.state = withVoidedNow(this.state, nowMs);
      await this.queryVoidedPredict();
    } else {
      this.state = withVoidedCleared(this.state);
      this.lastPredict = null;
      await this.queryNotYetPredict();
    }
    this.render();
  }

  setMode(mode: "live" | "what_if"): void {
    this.state = { ...this.state, mode };
    this.root.querySelector(".whatif")?.classList.toggle("hidden", mode !== "what_if");
    this.render();
  }

  /** What-if scrubbing reads the cached trajectory; no network traffic. */
  scrubWhatIf(t: number): void {
    this.state = { ...this.state, whatIfMin: t };
    this.render();
  }

  /** Clock tick re-renders from cached payloads; a stale no-void prediction
   * yields to the moving trajectory point. */
  tick(): void {
    if (this.state.voidedAtMin === undefined) {
      this.lastPredict = null;
    }
    this.render();
  }

  // ------------------------------------------------------------- queries --
  private async refreshTrajectory(): Promise<void> {
    try {
      this.trajectory = await this.api.trajectory(this.state.ageYears, this.state.sex);
      this.lastPredict = null; // covariates changed; old prediction is stale
      this.clearErrors();
    } catch (err) {
      this.handleError(err);
      return;
    }
    this.render();
  }

  private async queryVoidedPredict(): Promise<void> {
    if (this.state.voidedAtMin === undefined) return;
    try {
      this.lastPredict = await this.api.predict({
        age_years: this.state.ageYears,
        sex: this.state.sex,
        state: { kind: "voided_at", t_min: this.state.voidedAtMin },
      });
      this.clearErrors();
    } catch (err) {
      this.handleError(err);
    }
  }

  private async queryNotYetPredict(): Promise<void> {
    try {
      this.lastPredict = await this.api.predict({
        age_years: this.state.ageYears,
        sex: this.state.sex,
        state: { kind: "not_yet", t_min: elapsedMin(this.state, this.now()) },
      });
      this.clearErrors();
    } catch (err) {
      this.handleError(err);
    }
  }

  // ------------------------------------------------------------ rendering --
  private gaugeValues(): GaugeValues | null {
    const nowMs = this.now();
    checkInvariants(this.state, nowMs);
    if (this.state.mode === "what_if") {
      if (!this.trajectory) return null;
      const i = nearestGridIndex(this.trajectory.t_min, this.state.whatIfMin);
      const b = this.trajectory.voided_at;
      return { mean: b.p_mean[i], low: b.p_low[i], high: b.p_high[i],
               source: `what-if void at ${fmtMin(this.trajectory.t_min[i])}` };
    }
    if (this.lastPredict) {
      const source = this.state.voidedAtMin !== undefined
        ? `voided at ${fmtMin(this.state.voidedAtMin)}`
        : "no void yet";
      return { mean: this.lastPredict.p_mean, low: this.lastPredict.p_low,
               high: this.lastPredict.p_high, source };
    }
    if (!this.trajectory) return null;
    if (this.state.voidedAtMin !== undefined) {
      const i = nearestGridIndex(this.trajectory.t_min, this.state.voidedAtMin);
      const b = this.trajectory.voided_at;
      return { mean: b.p_mean[i], low: b.p_low[i], high: b.p_high[i],
               source: `voided at ${fmtMin(this.trajectory.t_min[i])}` };
    }
    const elapsed = elapsedMin(this.state, nowMs);
    const i = nearestGridIndex(this.trajectory.t_min, elapsed);
    const b = this.trajectory.not_yet;
    return { mean: b.p_mean[i], low: b.p_low[i], high: b.p_high[i],
             source: `no void by ${fmtMin(this.trajectory.t_min[i])}` };
  }

  render(): void {
    const values = this.gaugeValues();
    if (values) {
      // render-time assertion: the band must bracket the mean
      if (!(values.low <= values.mean && values.mean <= values.high)) {
        throw new Error("band order violated: low <= mean <= high required");
      }
      this.els["gauge-value"].textContent = fmtPct(values.mean);
      this.els["band-low"].textContent = fmtPct(values.low);
      this.els["band-high"].textContent = fmtPct(values.high);
      this.els["gauge-source"].textContent = values.source;
    }
    this.els["elapsed-display"].textContent =
      `elapsed ${fmtMin(elapsedMin(this.state, this.now()))}`;
    this.els["whatif-readout"].textContent = fmtMin(this.state.whatIfMin);
    this.renderPlot();
  }

  private renderPlot(): void {
    if (!this.trajectory) return;
    const t = this.trajectory.t_min;
    const x = (v: number) => (v / t[t.length - 1]) * PLOT_W;
    const y = (p: number) => (1 - p) * PLOT_H;
    const line = (xs: number[], ps: number[]) =>
      xs.map((v, i) => `${x(v).toFixed(1)},${y(ps[i]).toFixed(1)}`).join(" ");
    const band = (branch: { p_low: number[]; p_high: number[] }) => {
      const upper = t.map((v, i) => `${x(v).toFixed(1)},${y(branch.p_high[i]).toFixed(1)}`);
      const lower = [...t].reverse().map((v, i) =>
        `${x(v).toFixed(1)},${y(branch.p_low[t.length - 1 - i]).toFixed(1)}`);
      return [...upper, ...lower].join(" ");
    };
    const marker = this.state.mode === "what_if"
      ? this.state.whatIfMin
      : Math.min(elapsedMin(this.state, this.now()), t[t.length - 1]);
    const refs = RISK_REFERENCE_LINES.map(
      (p) => `<line class="ref-line" x1="0" x2="${PLOT_W}" y1="${y(p).toFixed(1)}"
               y2="${y(p).toFixed(1)}" stroke="#999" stroke-dasharray="4 4"/>`).join("");
    this.els["traj-svg"].innerHTML = `
      ${refs}
      <polygon class="band-not-yet" points="${band(this.trajectory.not_yet)}"
               fill="#aac4e2" opacity="0.35"/>
      <polygon class="band-voided-at" points="${band(this.trajectory.voided_at)}"
               fill="#e2b3aa" opacity="0.35"/>
      <polyline class="line-not-yet" points="${line(t, this.trajectory.not_yet.p_mean)}"
                fill="none" stroke="#36618e" stroke-width="2"/>
      <polyline class="line-voided-at" points="${line(t, this.trajectory.voided_at.p_mean)}"
                fill="none" stroke="#8e4536" stroke-width="2"/>
      <line id="time-marker" x1="${x(marker).toFixed(1)}" x2="${x(marker).toFixed(1)}"
            y1="0" y2="${PLOT_H}" stroke="#222" stroke-width="1.5"/>
    `;
  }

  // --------------------------------------------------------------- errors --
  private clearErrors(): void {
    this.els["status-banner"].classList.add("hidden");
    this.els["status-banner"].textContent = "";
    this.els["age-error"].textContent = "";
    this.root.querySelectorAll(".stale").forEach((el) => el.classList.remove("stale"));
  }

  private handleError(err: unknown): void {
    if (err instanceof DOMException && err.name === "AbortError") {
      return; // superseded by a newer request
    }
    if (err instanceof ApiError) {
      this.els["age-error"].textContent = `${err.code}: ${err.message}`;
      return;
    }
    // network failure: offline banner, grey out the last values
    this.els["status-banner"].textContent = "service unreachable - showing last values";
    this.els["status-banner"].classList.remove("hidden");
    this.els["gauge-value"].classList.add("stale");
  }
}
