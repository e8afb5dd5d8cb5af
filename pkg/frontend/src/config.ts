/** Build-time configuration. The API base URL can be overridden by defining
 * `window.LOOPSCREEN_API_BASE` before the bundle loads (e.g. from a tiny
 * inline script), so deployments can point one build at different backends. */

export interface AppConfig {
  apiBase: string;
  /** Mirrors the service's upload cap so oversized files never leave the browser. */
  maxUploadBytes: number;
  healthPollIntervalMs: number;
  healthTimeoutMs: number;
}

declare global {
  interface Window {
    LOOPSCREEN_API_BASE?: string;
  }
}

export function loadConfig(): AppConfig {
  const override =
    typeof window !== "undefined" ? window.LOOPSCREEN_API_BASE : undefined;
  return {
    apiBase: override ?? "http://127.0.0.1:8571",
    maxUploadBytes: 5 * 1024 * 1024,
    healthPollIntervalMs: 30_000,
    healthTimeoutMs: 10_000,
  };
}
