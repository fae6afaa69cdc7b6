import type { Recommendation, SessionView } from "../src/types.js";

export function rec(partial: Partial<Recommendation> = {}): Recommendation {
  return {
    next_level: 2,
    kind: "escalate",
    rationale: "example",
    assigned_dose: null,
    mtd_declared: null,
    coherence_clamped: false,
    ...partial,
  };
}

export function sessionView(partial: Partial<SessionView> = {}): SessionView {
  return {
    id: "abc123def456",
    design: { kind: "dsa", b: 0.2, target_p: 0.2 },
    outcome_kind: "binary",
    n_levels: 5,
    m: 2,
    seed: 7,
    coherence_guard: false,
    closed: false,
    history: [
      {
        cohort: 1,
        level: 1,
        assigned_dose: null,
        outcomes: [0, 0],
        recommendation: rec({ next_level: 2, kind: "escalate" }),
      },
      {
        cohort: 2,
        level: 2,
        assigned_dose: null,
        outcomes: [1, 0],
        recommendation: rec({ next_level: 1, kind: "deescalate" }),
      },
    ],
    recommendation: rec({ next_level: 1, kind: "deescalate" }),
    level_counts: { n: [2, 2, 0, 0, 0], z: [0, 1, 0, 0, 0] },
    estimates: null,
    ...partial,
  };
}
