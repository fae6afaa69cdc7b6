/** Derives everything the session screen shows from one GET /sessions/{id}
 * response.  Deliberately no dose logic: recommendations, counts, and
 * estimates are displayed exactly as the service sent them. */
import type { Recommendation, SessionView } from "./types.js";

export interface RecommendationCard {
  level: number | null;
  kind: Recommendation["kind"];
  rationale: string;
  clamped: boolean;
  assignedDose: number | null;
  mtdDeclared: number | null;
  headline: string;
}

export interface HistoryRowVm {
  cohort: number;
  level: number;
  outcomes: string;
  toxicities: number | null;
  next: string;
}

export interface EstimateBar {
  level: number;
  observed: number | null;
  enrolled: number;
  modeled: number | null;
}

export interface SessionViewModel {
  id: string;
  designLabel: string;
  subtitle: string;
  closed: boolean;
  recommendation: RecommendationCard;
  rows: HistoryRowVm[];
  bars: EstimateBar[];
  binary: boolean;
}

function headline(rec: Recommendation): string {
  if (rec.kind === "stop") {
    return rec.mtd_declared === null
      ? "Stop: no MTD"
      : `Stop: MTD level ${rec.mtd_declared}`;
  }
  return `Next dose: level ${rec.next_level}`;
}

export function recommendationCard(rec: Recommendation): RecommendationCard {
  return {
    level: rec.next_level,
    kind: rec.kind,
    rationale: rec.rationale,
    clamped: rec.coherence_clamped,
    assignedDose: rec.assigned_dose,
    mtdDeclared: rec.mtd_declared,
    headline: headline(rec),
  };
}

export function toViewModel(view: SessionView): SessionViewModel {
  const binary = view.outcome_kind === "binary";
  const rows = view.history.map((row) => ({
    cohort: row.cohort,
    level: row.level,
    outcomes: row.outcomes.map((y) => (binary ? String(y) : y.toFixed(3))).join(", "),
    toxicities: binary ? row.outcomes.filter((y) => y === 1).length : null,
    next: headline(row.recommendation),
  }));
  const bars: EstimateBar[] = [];
  for (let level = 1; level <= view.n_levels; level += 1) {
    const enrolled = view.level_counts.n[level - 1] ?? 0;
    const z = view.level_counts.z ? view.level_counts.z[level - 1] : null;
    bars.push({
      level,
      enrolled,
      observed: z !== null && enrolled > 0 ? z / enrolled : null,
      modeled: view.estimates ? view.estimates[level - 1] : null,
    });
  }
  return {
    id: view.id,
    designLabel: view.design.kind,
    subtitle:
      `${view.n_levels} levels, cohorts of ${view.m}, ` +
      `${view.outcome_kind} outcomes` +
      (view.coherence_guard ? ", coherence guard on" : ""),
    closed: view.closed,
    recommendation: recommendationCard(view.recommendation),
    rows,
    bars,
    binary,
  };
}
