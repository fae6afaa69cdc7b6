import { describe, expect, it } from "vitest";

import {
  collectDesignConfig,
  designFields,
  readField,
  renderField,
} from "../src/schemaForm.js";
import type { DesignCatalogEntry } from "../src/types.js";

const DSA_ENTRY: DesignCatalogEntry = {
  kind: "dsa",
  outcome_kind: "binary",
  randomized: false,
  required_m: null,
  min_m: 1,
  parameters: {
    type: "object",
    properties: {
      b: { type: "number", description: "gain", exclusiveMinimum: 0 },
      target_p: { type: "number", default: 0.2, exclusiveMinimum: 0, exclusiveMaximum: 1 },
    },
    required: ["b", "target_p"],
  },
};

const CRM_ENTRY: DesignCatalogEntry = {
  kind: "crm",
  outcome_kind: "binary",
  randomized: false,
  required_m: null,
  min_m: 1,
  parameters: {
    type: "object",
    properties: {
      skeleton: { type: "array", items: { type: "number" } },
      model_form: { type: "string", enum: ["empiric", "logistic"], default: "empiric" },
      prior_sd: { type: "number", default: 1.34, exclusiveMinimum: 0 },
    },
  },
};

function mount(entry: DesignCatalogEntry): HTMLElement {
  const host = document.createElement("div");
  for (const spec of designFields(entry)) {
    host.appendChild(renderField(document, spec));
  }
  document.body.appendChild(host);
  return host;
}

function setValue(host: HTMLElement, name: string, value: string): void {
  const input = host.querySelector<HTMLInputElement>(`[data-field="${name}"] input, [data-field="${name}"] select`);
  if (!input) throw new Error(`no field ${name}`);
  input.value = value;
}

describe("schema-driven forms", () => {
  it("renders one field per catalog parameter with defaults applied", () => {
    const host = mount(DSA_ENTRY);
    expect(host.querySelectorAll("[data-field]")).toHaveLength(2);
    const target = host.querySelector<HTMLInputElement>('[data-field="target_p"] input');
    expect(target?.value).toBe("0.2");
  });

  it("collects a valid design config", () => {
    const host = mount(DSA_ENTRY);
    setValue(host, "b", "0.2");
    const { config, errors } = collectDesignConfig(host, DSA_ENTRY);
    expect(errors).toEqual({});
    expect(config).toEqual({ kind: "dsa", b: 0.2, target_p: 0.2 });
  });

  it("rejects a non-positive gain inline", () => {
    const host = mount(DSA_ENTRY);
    setValue(host, "b", "-1");
    const { config, errors } = collectDesignConfig(host, DSA_ENTRY);
    expect(config).toBeUndefined();
    expect(errors.b).toBe("must be > 0");
  });

  it("requires required fields", () => {
    const host = mount(DSA_ENTRY);
    setValue(host, "b", "");
    const { errors } = collectDesignConfig(host, DSA_ENTRY);
    expect(errors.b).toBe("required");
  });

  it("parses arrays and enums; optional blanks are omitted", () => {
    const host = mount(CRM_ENTRY);
    setValue(host, "skeleton", "0.05, 0.12, 0.2");
    const { config, errors } = collectDesignConfig(host, CRM_ENTRY);
    expect(errors).toEqual({});
    expect(config).toEqual({
      kind: "crm",
      skeleton: [0.05, 0.12, 0.2],
      model_form: "empiric",
      prior_sd: 1.34,
    });
    const host2 = mount(CRM_ENTRY);
    setValue(host2, "skeleton", "");
    const second = collectDesignConfig(host2, CRM_ENTRY);
    expect(second.config).not.toHaveProperty("skeleton");
  });

  it("flags malformed arrays", () => {
    const host = mount(CRM_ENTRY);
    setValue(host, "skeleton", "0.1, banana");
    const spec = designFields(CRM_ENTRY).find((s) => s.name === "skeleton")!;
    expect(readField(host, spec).error).toBe("must be comma-separated numbers");
  });
});
