/** Orchestration between the state machine and the API client, kept free of
 * DOM references so the whole flow runs under vitest with a stubbed fetch. */

import { ApiError, fetchHealth, submitImage } from "./api.js";
import type { HealthResponse } from "./api.js";
import type { AppConfig } from "./config.js";
import {
  INITIAL_STATE,
  assertStateInvariant,
  beginUpload,
  checkFileBeforeUpload,
  uploadFailed,
  uploadSucceeded,
} from "./state.js";
import type { UploadState } from "./state.js";

export interface UploadFile {
  name: string;
  size: number;
  blob: Blob;
}

export class UploadController {
  state: UploadState = INITIAL_STATE;

  constructor(
    private readonly cfg: AppConfig,
    private readonly onChange: (state: UploadState) => void,
  ) {}

  private setState(next: UploadState): void {
    assertStateInvariant(next);
    this.state = next;
    this.onChange(next);
  }

  reset(): void {
    this.setState(INITIAL_STATE);
  }

  /** One upload at a time; returns false when the submission was not started
   * (already uploading, or rejected client-side before any request). */
  async submit(file: UploadFile): Promise<boolean> {
    if (this.state.phase === "uploading") return false;
    const rejected = checkFileBeforeUpload(
      this.state,
      file.name,
      file.size,
      this.cfg.maxUploadBytes,
    );
    if (rejected !== null) {
      this.setState(rejected);
      return false;
    }
    this.setState(beginUpload(this.state, file.name, file.size));
    try {
      const response = await submitImage(this.cfg.apiBase, file.blob, file.name);
      this.setState(uploadSucceeded(this.state, response));
    } catch (err) {
      const code = err instanceof ApiError ? err.code : "network_error";
      const message = err instanceof Error ? err.message : String(err);
      this.setState(uploadFailed(this.state, code, message));
    }
    return true;
  }
}

export type HealthStatus =
  | { kind: "healthy"; health: HealthResponse }
  | { kind: "updated"; health: HealthResponse }
  | { kind: "offline"; health: null };

export class HealthMonitor {
  private lastChecksum: string | null = null;

  constructor(private readonly cfg: AppConfig) {}

  async poll(): Promise<HealthStatus> {
    try {
      const health = await fetchHealth(this.cfg.apiBase, this.cfg.healthTimeoutMs);
      const changed =
        this.lastChecksum !== null && this.lastChecksum !== health.model_checksum;
      this.lastChecksum = health.model_checksum;
      return { kind: changed ? "updated" : "healthy", health };
    } catch {
      return { kind: "offline", health: null };
    }
  }
}
