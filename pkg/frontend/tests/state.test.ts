import { describe, expect, it } from "vitest";

import type { PredictResponse } from "../src/api.js";
import {
  INITIAL_STATE,
  assertStateInvariant,
  beginUpload,
  checkFileBeforeUpload,
  formatBytes,
  uploadFailed,
  uploadSucceeded,
} from "../src/state.js";

const response: PredictResponse = {
  probability_patient: 0.42,
  label: "control",
  model_arch: "custom_cnn",
  model_checksum: "cafe1234",
  preprocess_echo: {},
};

describe("phase transitions", () => {
  it("walks idle -> uploading -> done", () => {
    let state = INITIAL_STATE;
    expect(state.phase).toBe("idle");
    state = beginUpload(state, "loop.png", 1024);
    expect(state.phase).toBe("uploading");
    expect(state.response).toBeNull();
    state = uploadSucceeded(state, response);
    expect(state.phase).toBe("done");
    expect(state.response?.probability_patient).toBe(0.42);
  });

  it("walks idle -> uploading -> error and stays retriable", () => {
    let state = beginUpload(INITIAL_STATE, "loop.png", 1024);
    state = uploadFailed(state, "network_error", "down");
    expect(state.phase).toBe("error");
    expect(state.errorCode).toBe("network_error");
    expect(state.response).toBeNull();
  });

  it("holds the response-iff-done invariant in every reachable state", () => {
    const states = [
      INITIAL_STATE,
      beginUpload(INITIAL_STATE, "a.png", 10),
      uploadSucceeded(beginUpload(INITIAL_STATE, "a.png", 10), response),
      uploadFailed(beginUpload(INITIAL_STATE, "a.png", 10), "no_ink", "blank"),
    ];
    for (const state of states) {
      expect(() => assertStateInvariant(state)).not.toThrow();
    }
  });
});

describe("malformed responses never reach the result view", () => {
  it.each([
    [{ ...response, probability_patient: 1.7 }],
    [{ ...response, probability_patient: -0.1 }],
    [{ ...response, probability_patient: Number.NaN }],
    [{ ...response, probability_patient: "0.9" as unknown as number }],
    [{ ...response, label: "sick" as "patient" }],
  ])("rejects %j", (bad) => {
    const state = uploadSucceeded(beginUpload(INITIAL_STATE, "a.png", 10), bad);
    expect(state.phase).toBe("error");
    expect(state.errorCode).toBe("malformed_response");
    expect(state.response).toBeNull();
  });
});

describe("client-side size gate", () => {
  it("rejects oversized files with a size message", () => {
    const rejected = checkFileBeforeUpload(INITIAL_STATE, "huge.png", 6 * 1024 * 1024,
                                           5 * 1024 * 1024);
    expect(rejected).not.toBeNull();
    expect(rejected?.phase).toBe("error");
    expect(rejected?.errorCode).toBe("file_too_large");
    expect(rejected?.errorMessage).toContain("6.0 MiB");
    expect(rejected?.errorMessage).toContain("5.0 MiB");
  });

  it("passes files at or under the limit", () => {
    expect(checkFileBeforeUpload(INITIAL_STATE, "ok.png", 5 * 1024 * 1024,
                                 5 * 1024 * 1024)).toBeNull();
  });
});

describe("byte formatting", () => {
  it("picks sensible units", () => {
    expect(formatBytes(512)).toBe("512 B");
    expect(formatBytes(2048)).toBe("2.0 KiB");
    expect(formatBytes(5 * 1024 * 1024)).toBe("5.0 MiB");
  });
});
