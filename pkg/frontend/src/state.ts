/** Upload state machine. Exactly one phase at a time; a response object exists
 * if and only if the phase is "done". Probabilities are validated here so a
 * malformed payload can never reach the result view as a number. */

import type { PredictResponse } from "./api.js";

export type Phase = "idle" | "uploading" | "done" | "error";

export interface UploadState {
  phase: Phase;
  fileName: string | null;
  fileSize: number | null;
  response: PredictResponse | null;
  errorCode: string | null;
  errorMessage: string | null;
}

export const INITIAL_STATE: UploadState = {
  phase: "idle",
  fileName: null,
  fileSize: null,
  response: null,
  errorCode: null,
  errorMessage: null,
};

export function beginUpload(
  state: UploadState,
  fileName: string,
  fileSize: number,
): UploadState {
  return {
    phase: "uploading",
    fileName,
    fileSize,
    response: null,
    errorCode: null,
    errorMessage: null,
  };
}

export function uploadFailed(
  state: UploadState,
  code: string,
  message: string,
): UploadState {
  return {
    ...state,
    phase: "error",
    response: null,
    errorCode: code,
    errorMessage: message,
  };
}

function isValidResponse(response: PredictResponse): boolean {
  const p = response.probability_patient;
  return (
    typeof p === "number" &&
    Number.isFinite(p) &&
    p >= 0 &&
    p <= 1 &&
    (response.label === "patient" || response.label === "control")
  );
}

export function uploadSucceeded(
  state: UploadState,
  response: PredictResponse,
): UploadState {
  if (!isValidResponse(response)) {
    return uploadFailed(
      state,
      "malformed_response",
      "the service returned an out-of-range or malformed score",
    );
  }
  return { ...state, phase: "done", response, errorCode: null, errorMessage: null };
}

/** Client-side gate mirroring the server's upload cap. Returns an error state
 * (and the caller sends nothing) when the file is too large. */
export function checkFileBeforeUpload(
  state: UploadState,
  fileName: string,
  fileSize: number,
  maxUploadBytes: number,
): UploadState | null {
  if (fileSize > maxUploadBytes) {
    return {
      ...state,
      phase: "error",
      fileName,
      fileSize,
      response: null,
      errorCode: "file_too_large",
      errorMessage: `file is ${formatBytes(fileSize)}; the limit is ${formatBytes(maxUploadBytes)}`,
    };
  }
  return null;
}

export function formatBytes(bytes: number): string {
  if (bytes >= 1024 * 1024) return `${(bytes / (1024 * 1024)).toFixed(1)} MiB`;
  if (bytes >= 1024) return `${(bytes / 1024).toFixed(1)} KiB`;
  return `${bytes} B`;
}

export function assertStateInvariant(state: UploadState): void {
  if ((state.phase === "done") !== (state.response !== null)) {
    throw new Error("invariant violated: response must exist iff phase is done");
  }
}
