/** Wire types for the trial-conduct HTTP API. */

export type DecisionKind = "escalate" | "stay" | "deescalate" | "stop";

export interface Recommendation {
  next_level: number | null;
  kind: DecisionKind;
  rationale: string;
  assigned_dose: number | null;
  mtd_declared: number | null;
  coherence_clamped: boolean;
}

export interface HistoryRow {
  cohort: number;
  level: number;
  assigned_dose: number | null;
  outcomes: number[];
  recommendation: Recommendation;
}

export interface DesignConfig {
  kind: string;
  [param: string]: unknown;
}

export interface SessionView {
  id: string;
  design: DesignConfig;
  outcome_kind: "binary" | "biomarker";
  n_levels: number;
  m: number;
  seed: number;
  coherence_guard: boolean;
  closed: boolean;
  history: HistoryRow[];
  recommendation: Recommendation;
  level_counts: { n: number[]; z: number[] | null };
  estimates: (number | null)[] | null;
}

export interface ParamSchema {
  type?: string;
  description?: string;
  default?: unknown;
  enum?: unknown[];
  minimum?: number;
  maximum?: number;
  exclusiveMinimum?: number;
  exclusiveMaximum?: number;
  items?: { type: string };
}

export interface DesignCatalogEntry {
  kind: string;
  outcome_kind: "binary" | "biomarker";
  randomized: boolean;
  required_m: number | null;
  min_m: number;
  parameters: {
    type: string;
    properties: Record<string, ParamSchema>;
    required?: string[];
  };
}

export interface DesignCatalog {
  designs: DesignCatalogEntry[];
  session_schema: { properties: Record<string, ParamSchema>; required?: string[] };
}

export interface ApiErrorBody {
  code: string;
  message: string;
  fields: string[];
}

export interface SessionCreated {
  id: string;
  recommendation: Recommendation;
}
