/** Single-page trial-conduct client.
 *
 * Optimistic UI is deliberately disabled: every mutation waits for the
 * service response and the screen is rebuilt from a fresh GET of the
 * session, so nothing a clinician sees is ever unconfirmed. */
import { ApiError, ConductClient } from "./api.js";
import { renderStepChart } from "./chart.js";
import {
  clearFieldErrors,
  collectDesignConfig,
  designFields,
  readField,
  renderField,
  showFieldError,
  type FieldSpec,
} from "./schemaForm.js";
import type { DesignCatalogEntry, SessionView } from "./types.js";
import { toViewModel } from "./viewmodel.js";

const SESSION_FIELD_ORDER = ["n_levels", "m", "start_level", "seed", "coherence_guard"];

export interface AppHandle {
  client: ConductClient;
  currentSessionId: () => string | null;
}

type FetchLike = ConstructorParameters<typeof ConductClient>[1];

export async function mountApp(
  root: HTMLElement,
  baseUrl: string,
  fetchImpl?: FetchLike,
): Promise<AppHandle> {
  const doc = root.ownerDocument;
  const client = new ConductClient(baseUrl, fetchImpl);
  const catalog = await client.designs();
  let sessionId: string | null = null;

  function el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    attrs: Record<string, string> = {},
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = doc.createElement(tag);
    for (const [key, value] of Object.entries(attrs)) {
      node.setAttribute(key, value);
    }
    if (text !== undefined) node.textContent = text;
    return node;
  }

  function sessionFieldSpecs(entry: DesignCatalogEntry): FieldSpec[] {
    const props = catalog.session_schema.properties;
    const required = new Set(catalog.session_schema.required ?? []);
    return SESSION_FIELD_ORDER.filter((name) => name in props).map((name) => {
      const schema = { ...props[name] };
      if (name === "m") {
        schema.default = entry.required_m ?? Math.max(entry.min_m, 1);
      }
      if (name === "n_levels" && schema.default === undefined) {
        schema.default = 5;
      }
      return { name, schema, required: required.has(name) };
    });
  }

  // ----- wizard ------------------------------------------------------------

  function renderWizard(): void {
    sessionId = null;
    root.textContent = "";
    const screen = el("section", { id: "wizard" });
    screen.appendChild(el("h1", {}, "Start a dose-finding session"));

    const kindField = el("label", { class: "field" });
    kindField.appendChild(el("span", {}, "design"));
    const kindSelect = el("select", { id: "design-kind" });
    for (const entry of catalog.designs) {
      const opt = el("option", { value: entry.kind }, entry.kind);
      kindSelect.appendChild(opt);
    }
    kindField.appendChild(kindSelect);
    screen.appendChild(kindField);

    const designParams = el("div", { id: "design-params" });
    const sessionParams = el("div", { id: "session-params" });
    screen.appendChild(designParams);
    screen.appendChild(sessionParams);

    const info = el("p", { id: "design-info", class: "hint" });
    screen.appendChild(info);

    const createBtn = el("button", { id: "create-session", type: "button" }, "Create session");
    screen.appendChild(createBtn);
    const errorBox = el("p", { id: "wizard-error", class: "error" });
    screen.appendChild(errorBox);

    function currentEntry(): DesignCatalogEntry {
      const kind = (kindSelect as HTMLSelectElement).value;
      const entry = catalog.designs.find((d) => d.kind === kind);
      if (!entry) throw new Error(`unknown design ${kind}`);
      return entry;
    }

    function renderParamFields(): void {
      const entry = currentEntry();
      designParams.textContent = "";
      for (const spec of designFields(entry)) {
        designParams.appendChild(renderField(doc, spec, "param"));
      }
      sessionParams.textContent = "";
      for (const spec of sessionFieldSpecs(entry)) {
        sessionParams.appendChild(renderField(doc, spec, "session"));
      }
      info.textContent =
        `${entry.outcome_kind} outcomes; ` +
        (entry.required_m
          ? `cohorts of exactly ${entry.required_m}`
          : `cohort size at least ${entry.min_m}`) +
        (entry.randomized ? "; randomized rule" : "");
    }

    kindSelect.addEventListener("change", renderParamFields);
    renderParamFields();

    createBtn.addEventListener("click", () => {
      void (async () => {
        errorBox.textContent = "";
        clearFieldErrors(screen);
        const entry = currentEntry();
        const design = collectDesignConfig(designParams, entry);
        const config: Record<string, unknown> = {};
        let invalid = false;
        for (const [name, message] of Object.entries(design.errors)) {
          showFieldError(designParams, name, message);
          invalid = true;
        }
        for (const spec of sessionFieldSpecs(entry)) {
          const result = readField(sessionParams, spec);
          if (result.error) {
            showFieldError(sessionParams, spec.name, result.error);
            invalid = true;
          } else if (result.value !== undefined) {
            config[spec.name] = result.value;
          }
        }
        if (invalid || !design.config) return;
        config.design = design.config;
        try {
          const created = await client.createSession(config);
          sessionId = created.id;
          await refreshSession();
        } catch (err) {
          if (err instanceof ApiError) {
            errorBox.textContent = `${err.body.code}: ${err.body.message}`;
            for (const field of err.body.fields) {
              showFieldError(screen, field.split(".").pop() ?? field, err.body.message);
            }
          } else {
            errorBox.textContent = String(err);
          }
        }
      })();
    });

    root.appendChild(screen);
  }

  // ----- session screen ----------------------------------------------------

  async function refreshSession(): Promise<void> {
    if (!sessionId) return;
    const view = await client.getSession(sessionId);
    renderSession(view);
  }

  function renderSession(view: SessionView): void {
    const vm = toViewModel(view);
    root.textContent = "";
    const screen = el("section", { id: "session" });

    const header = el("header");
    header.appendChild(el("h1", {}, `Session ${vm.id.slice(0, 8)} — ${vm.designLabel}`));
    header.appendChild(el("p", { class: "hint" }, vm.subtitle));
    screen.appendChild(header);

    const card = el("div", {
      id: "rec-card",
      class: `card kind-${vm.recommendation.kind}`,
      "data-level": vm.recommendation.level === null ? "" : String(vm.recommendation.level),
    });
    card.appendChild(el("h2", { id: "rec-headline" }, vm.recommendation.headline));
    if (vm.recommendation.clamped) {
      card.appendChild(
        el("span", { class: "clamp-badge" }, "coherence clamp applied"),
      );
    }
    if (vm.recommendation.assignedDose !== null) {
      card.appendChild(
        el("p", { class: "hint" },
           `conceptual dose ${vm.recommendation.assignedDose.toFixed(4)}`),
      );
    }
    card.appendChild(el("p", { class: "rationale" }, vm.recommendation.rationale));
    screen.appendChild(card);

    const chart = el("div", { id: "chart" });
    chart.innerHTML = renderStepChart(view);
    screen.appendChild(chart);

    const bars = el("div", { id: "bars" });
    bars.appendChild(el("h3", {}, "Per-level estimates"));
    for (const bar of vm.bars) {
      const row = el("div", { class: "bar-row", "data-level": String(bar.level) });
      row.appendChild(el("span", { class: "bar-label" }, `L${bar.level}`));
      const obs = bar.observed === null ? "—" : bar.observed.toFixed(2);
      row.appendChild(
        el("span", { class: "bar-observed" },
           `observed ${obs} (${bar.enrolled} treated)`),
      );
      if (bar.modeled !== null) {
        row.appendChild(
          el("span", { class: "bar-modeled" }, `model ${bar.modeled.toFixed(3)}`),
        );
      }
      bars.appendChild(row);
    }
    screen.appendChild(bars);

    const table = el("table", { id: "history" });
    const head = el("tr");
    for (const title of ["cohort", "level", "outcomes", "recommendation"]) {
      head.appendChild(el("th", {}, title));
    }
    table.appendChild(head);
    for (const row of vm.rows) {
      const tr = el("tr", { "data-cohort": String(row.cohort) });
      tr.appendChild(el("td", {}, String(row.cohort)));
      tr.appendChild(el("td", {}, `L${row.level}`));
      tr.appendChild(el("td", {}, row.outcomes));
      tr.appendChild(el("td", {}, row.next));
      table.appendChild(tr);
    }
    screen.appendChild(table);

    const entry = el("form", { id: "outcome-form" });
    entry.appendChild(el("h3", {}, `Enter cohort outcomes (${view.m} subjects)`));
    for (let i = 0; i < view.m; i += 1) {
      const label = el("label", { class: "field" });
      label.appendChild(el("span", {}, `subject ${i + 1}`));
      if (vm.binary) {
        const select = el("select", { name: `outcome-${i}`, class: "outcome-input" });
        select.appendChild(el("option", { value: "" }, "—"));
        select.appendChild(el("option", { value: "0" }, "0 (no toxicity)"));
        select.appendChild(el("option", { value: "1" }, "1 (toxicity)"));
        label.appendChild(select);
      } else {
        const input = el("input", {
          name: `outcome-${i}`,
          class: "outcome-input",
          type: "number",
          step: "any",
          placeholder: "biomarker value",
        });
        label.appendChild(input);
      }
      entry.appendChild(label);
    }
    const submit = el("button", { id: "submit-outcomes", type: "button" }, "Record cohort");
    if (vm.closed) submit.setAttribute("disabled", "disabled");
    entry.appendChild(submit);
    const entryError = el("p", { id: "entry-error", class: "error" });
    entry.appendChild(entryError);
    screen.appendChild(entry);

    const controls = el("div", { id: "controls" });
    const undoBtn = el("button", { id: "undo-btn", type: "button" }, "Undo last cohort");
    if (vm.rows.length === 0) undoBtn.setAttribute("disabled", "disabled");
    controls.appendChild(undoBtn);
    const closeBtn = el("button", { id: "close-btn", type: "button" }, "Close session");
    controls.appendChild(closeBtn);
    const newBtn = el("button", { id: "new-session", type: "button" }, "New session");
    controls.appendChild(newBtn);
    screen.appendChild(controls);

    submit.addEventListener("click", () => {
      void (async () => {
        entryError.textContent = "";
        const values: number[] = [];
        const inputs = Array.from(
          entry.querySelectorAll<HTMLInputElement | HTMLSelectElement>(".outcome-input"),
        );
        for (const input of inputs) {
          const raw = input.value.trim();
          if (raw === "") {
            entryError.textContent = `all ${view.m} outcomes are required`;
            return;
          }
          const value = Number(raw);
          if (!Number.isFinite(value)) {
            entryError.textContent = "outcomes must be numbers";
            return;
          }
          if (vm.binary && value !== 0 && value !== 1) {
            entryError.textContent = "binary outcomes must be 0 or 1";
            return;
          }
          values.push(value);
        }
        try {
          await client.postOutcomes(view.id, values);
          await refreshSession();
        } catch (err) {
          entryError.textContent =
            err instanceof ApiError ? `${err.body.code}: ${err.body.message}` : String(err);
        }
      })();
    });

    undoBtn.addEventListener("click", () => {
      void (async () => {
        entryError.textContent = "";
        try {
          await client.undo(view.id);
          await refreshSession();
        } catch (err) {
          entryError.textContent =
            err instanceof ApiError ? `${err.body.code}: ${err.body.message}` : String(err);
        }
      })();
    });

    closeBtn.addEventListener("click", () => {
      void (async () => {
        await client.close(view.id);
        await refreshSession();
      })();
    });

    newBtn.addEventListener("click", renderWizard);

    root.appendChild(screen);
  }

  renderWizard();
  return { client, currentSessionId: () => sessionId };
}
