/** Schema-driven form fields: new designs need no UI changes. */
import type { DesignCatalogEntry, ParamSchema } from "./types.js";

export interface FieldSpec {
  name: string;
  schema: ParamSchema;
  required: boolean;
}

export interface FieldResult {
  value?: unknown;
  error?: string;
}

export function designFields(entry: DesignCatalogEntry): FieldSpec[] {
  const required = new Set(entry.parameters.required ?? []);
  return Object.entries(entry.parameters.properties).map(([name, schema]) => ({
    name,
    schema,
    required: required.has(name),
  }));
}

export function renderField(doc: Document, spec: FieldSpec, prefix = "param"): HTMLElement {
  const wrap = doc.createElement("label");
  wrap.className = "field";
  wrap.dataset.field = spec.name;
  const caption = doc.createElement("span");
  caption.textContent = spec.required ? `${spec.name} *` : spec.name;
  caption.title = spec.schema.description ?? "";
  wrap.appendChild(caption);

  let input: HTMLElement;
  if (spec.schema.enum) {
    const select = doc.createElement("select");
    for (const option of spec.schema.enum) {
      const el = doc.createElement("option");
      el.value = String(option);
      el.textContent = String(option);
      select.appendChild(el);
    }
    if (spec.schema.default !== undefined) {
      (select as HTMLSelectElement).value = String(spec.schema.default);
    }
    input = select;
  } else if (spec.schema.type === "boolean") {
    const box = doc.createElement("input");
    box.type = "checkbox";
    box.checked = Boolean(spec.schema.default);
    input = box;
  } else {
    const box = doc.createElement("input");
    box.type = spec.schema.type === "number" || spec.schema.type === "integer" ? "number" : "text";
    if (spec.schema.type === "number") box.step = "any";
    if (spec.schema.type === "array") box.placeholder = "comma-separated numbers";
    if (spec.schema.default !== undefined) box.value = String(spec.schema.default);
    input = box;
  }
  input.setAttribute("name", `${prefix}-${spec.name}`);
  wrap.appendChild(input);
  const errorEl = doc.createElement("em");
  errorEl.className = "field-error";
  wrap.appendChild(errorEl);
  return wrap;
}

export function readField(container: HTMLElement, spec: FieldSpec): FieldResult {
  const wrap = container.querySelector<HTMLElement>(`[data-field="${spec.name}"]`);
  const input = wrap?.querySelector<HTMLInputElement | HTMLSelectElement>("input, select");
  if (!wrap || !input) {
    return { error: "field missing" };
  }
  const schema = spec.schema;
  if (schema.type === "boolean") {
    return { value: (input as HTMLInputElement).checked };
  }
  const raw = input.value.trim();
  if (raw === "") {
    return spec.required ? { error: "required" } : {};
  }
  if (schema.enum) {
    return { value: raw };
  }
  if (schema.type === "array") {
    const parts = raw.split(",").map((s) => Number(s.trim()));
    if (parts.some((v) => !Number.isFinite(v))) {
      return { error: "must be comma-separated numbers" };
    }
    return { value: parts };
  }
  if (schema.type === "number" || schema.type === "integer") {
    const value = Number(raw);
    if (!Number.isFinite(value)) return { error: "must be a number" };
    if (schema.type === "integer" && !Number.isInteger(value)) {
      return { error: "must be an integer" };
    }
    if (schema.exclusiveMinimum !== undefined && value <= schema.exclusiveMinimum) {
      return { error: `must be > ${schema.exclusiveMinimum}` };
    }
    if (schema.minimum !== undefined && value < schema.minimum) {
      return { error: `must be >= ${schema.minimum}` };
    }
    if (schema.exclusiveMaximum !== undefined && value >= schema.exclusiveMaximum) {
      return { error: `must be < ${schema.exclusiveMaximum}` };
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      return { error: `must be <= ${schema.maximum}` };
    }
    return { value };
  }
  return { value: raw };
}

export function showFieldError(container: HTMLElement, name: string, message: string): void {
  const wrap = container.querySelector<HTMLElement>(`[data-field="${name}"]`);
  const errorEl = wrap?.querySelector<HTMLElement>(".field-error");
  if (errorEl) {
    errorEl.textContent = message;
  }
  wrap?.classList.add("invalid");
}

export function clearFieldErrors(container: HTMLElement): void {
  for (const el of Array.from(container.querySelectorAll<HTMLElement>(".field-error"))) {
    el.textContent = "";
  }
  for (const el of Array.from(container.querySelectorAll<HTMLElement>(".invalid"))) {
    el.classList.remove("invalid");
  }
}

export function collectDesignConfig(
  container: HTMLElement,
  entry: DesignCatalogEntry,
): { config?: Record<string, unknown>; errors: Record<string, string> } {
  const errors: Record<string, string> = {};
  const config: Record<string, unknown> = { kind: entry.kind };
  for (const spec of designFields(entry)) {
    const result = readField(container, spec);
    if (result.error) {
      errors[spec.name] = result.error;
    } else if (result.value !== undefined) {
      config[spec.name] = result.value;
    }
  }
  return Object.keys(errors).length ? { errors } : { config, errors };
}
