/** Dose-level step chart over cohort index with toxicity markers.
 * Pure presentation over server-provided history; no computation beyond
 * pixel placement. */
import type { SessionView } from "./types.js";

const WIDTH = 560;
const HEIGHT = 220;
const PAD = 32;

export function renderStepChart(view: SessionView): string {
  const levels = view.history.map((row) => row.level);
  const k = view.n_levels;
  const n = Math.max(levels.length, 1);
  const x = (i: number) => PAD + ((WIDTH - 2 * PAD) * i) / Math.max(n - 1, 1);
  const y = (level: number) => HEIGHT - PAD - ((HEIGHT - 2 * PAD) * (level - 1)) / (k - 1);

  const gridLines: string[] = [];
  for (let level = 1; level <= k; level += 1) {
    gridLines.push(
      `<line x1="${PAD}" y1="${y(level)}" x2="${WIDTH - PAD}" y2="${y(level)}" ` +
        `class="grid" stroke="#ddd"/>`,
      `<text x="${PAD - 8}" y="${y(level) + 4}" text-anchor="end" class="tick">L${level}</text>`,
    );
  }

  let path = "";
  if (levels.length > 0) {
    const parts = [`M ${x(0)} ${y(levels[0])}`];
    for (let i = 1; i < levels.length; i += 1) {
      parts.push(`H ${x(i)}`, `V ${y(levels[i])}`);
    }
    path = `<path d="${parts.join(" ")}" fill="none" stroke="#2b6cb0" stroke-width="2"/>`;
  }

  const markers = view.history
    .map((row, i) => {
      const binary = view.outcome_kind === "binary";
      const toxic = binary
        ? row.outcomes.filter((v) => v === 1).length
        : 0;
      const fill = toxic > 0 ? "#c53030" : "#2f855a";
      const r = toxic > 0 ? 4 + toxic : 4;
      const title = binary
        ? `cohort ${row.cohort}: level ${row.level}, ${toxic}/${row.outcomes.length} toxicities`
        : `cohort ${row.cohort}: level ${row.level}`;
      return (
        `<circle cx="${x(i)}" cy="${y(row.level)}" r="${r}" fill="${fill}" data-cohort="${row.cohort}" ` +
        `data-toxicities="${toxic}"><title>${title}</title></circle>`
      );
    })
    .join("");

  return (
    `<svg viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" aria-label="dose level by cohort">` +
    gridLines.join("") +
    path +
    markers +
    `</svg>`
  );
}
