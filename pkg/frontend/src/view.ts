/** Pure render functions producing HTML strings. Keeping them DOM-free makes
 * every visual contract testable in plain node. */

import type { HealthResponse, PredictResponse } from "./api.js";
import type { UploadState } from "./state.js";

/** Shown on every result and error view; an ethics requirement, not a nicety. */
export const DISCLAIMER =
  "Screening aid only — this score is not a diagnosis. " +
  "Interpretation requires a qualified clinician.";

const ERROR_MESSAGES: Record<string, string> = {
  file_too_large: "That file exceeds the upload limit. Please export a smaller image.",
  payload_too_large: "The service rejected the upload as too large.",
  unsupported_media_type: "The service expects a multipart image upload.",
  missing_image_field: "No image reached the service. Please reselect the file.",
  undecodable_image: "That file could not be read as a PNG or PGM image.",
  no_ink: "The page appears blank — no pen strokes were found.",
  content_too_large: "The drawing is larger than the analysis canvas.",
  network_error: "The screening service is unreachable. Check the connection and retry.",
  malformed_response: "The service answered in an unexpected format.",
  internal_error: "The service hit an internal error. Retry in a moment.",
};

export function humanErrorMessage(code: string | null, fallback: string | null): string {
  if (code && code in ERROR_MESSAGES) return ERROR_MESSAGES[code] as string;
  return fallback ?? "Something went wrong.";
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** 0.92 renders as "92.0%"; one decimal, always. */
export function formatProbability(probability: number): string {
  return `${(probability * 100).toFixed(1)}%`;
}

export function renderDisclaimer(): string {
  return `<p class="disclaimer" role="note">${escapeHtml(DISCLAIMER)}</p>`;
}

export function renderResult(response: PredictResponse): string {
  const percent = formatProbability(response.probability_patient);
  const badgeClass = response.label === "patient" ? "badge badge-patient" : "badge badge-control";
  return [
    `<section class="result">`,
    `<h2>Screening score</h2>`,
    // the raw probability stays inspectable on hover for auditability
    `<p class="score" title="raw probability: ${response.probability_patient}">${percent}</p>`,
    `<p>probability the sample comes from a patient with schizophrenia</p>`,
    `<span class="${badgeClass}">${escapeHtml(response.label)}</span>`,
    renderDisclaimer(),
    `<p class="provenance">model ${escapeHtml(response.model_arch)} · checksum ${escapeHtml(response.model_checksum)}</p>`,
    `</section>`,
  ].join("\n");
}

export function renderError(state: UploadState): string {
  const message = humanErrorMessage(state.errorCode, state.errorMessage);
  return [
    `<section class="result result-error">`,
    `<h2>Could not score the sample</h2>`,
    `<p class="error-message">${escapeHtml(message)}</p>`,
    `<button type="button" data-action="retry">Try again</button>`,
    renderDisclaimer(),
    `</section>`,
  ].join("\n");
}

export function renderUploading(fileName: string | null): string {
  const label = fileName ? escapeHtml(fileName) : "sample";
  return `<section class="result"><p class="progress">Scoring ${label}…</p>${renderDisclaimer()}</section>`;
}

export function renderIdle(): string {
  return `<section class="result result-idle"><p>Select a handwriting image (PNG or PGM) to score it.</p>${renderDisclaimer()}</section>`;
}

export function renderApp(state: UploadState): string {
  switch (state.phase) {
    case "done":
      // state machine guarantees response is present here
      return renderResult(state.response as PredictResponse);
    case "error":
      return renderError(state);
    case "uploading":
      return renderUploading(state.fileName);
    default:
      return renderIdle();
  }
}

export type BannerKind = "healthy" | "offline" | "updated";

export function renderHealthBanner(
  kind: BannerKind,
  health: HealthResponse | null,
): string {
  if (kind === "offline" || health === null) {
    return `<div class="banner banner-offline">Screening service offline — results unavailable.</div>`;
  }
  const identity = `model ${escapeHtml(health.model_arch)} · checksum ${escapeHtml(health.model_checksum)}`;
  if (kind === "updated") {
    return `<div class="banner banner-updated">Model updated since this page loaded — ${identity}. New scores use the new model.</div>`;
  }
  return `<div class="banner banner-healthy">Service online — ${identity}</div>`;
}
