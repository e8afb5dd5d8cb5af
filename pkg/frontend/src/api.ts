/** Thin client for the screening service's two endpoints. */

export interface PredictResponse {
  probability_patient: number;
  label: "patient" | "control";
  model_arch: string;
  model_checksum: string;
  preprocess_echo: Record<string, string | number>;
}

export interface HealthResponse {
  status: string;
  model_arch: string;
  model_checksum: string;
  uptime_seconds: number;
}

/** Error carrying the service's machine-readable code (or a client-side one:
 * network_error, malformed_response). */
export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorFromResponse(response: Response): Promise<ApiError> {
  try {
    const body = (await response.json()) as { error?: string; message?: string };
    return new ApiError(
      body.error ?? `http_${response.status}`,
      body.message ?? `request failed with status ${response.status}`,
    );
  } catch {
    return new ApiError(
      `http_${response.status}`,
      `request failed with status ${response.status}`,
    );
  }
}

export async function fetchHealth(
  apiBase: string,
  timeoutMs: number,
): Promise<HealthResponse> {
  const controller = new AbortController();
  const timer = setTimeout(() => controller.abort(), timeoutMs);
  try {
    const response = await fetch(`${apiBase}/api/v1/health`, {
      method: "GET",
      cache: "no-store",
      signal: controller.signal,
    });
    if (!response.ok) {
      throw await errorFromResponse(response);
    }
    return (await response.json()) as HealthResponse;
  } catch (err) {
    if (err instanceof ApiError) throw err;
    throw new ApiError("network_error", "screening service is unreachable");
  } finally {
    clearTimeout(timer);
  }
}

export async function submitImage(
  apiBase: string,
  file: Blob,
  fileName: string,
): Promise<PredictResponse> {
  const form = new FormData();
  form.append("image", file, fileName);
  let response: Response;
  try {
    response = await fetch(`${apiBase}/api/v1/predict`, {
      method: "POST",
      body: form,
    });
  } catch {
    throw new ApiError("network_error", "upload failed: service unreachable");
  }
  if (!response.ok) {
    throw await errorFromResponse(response);
  }
  try {
    return (await response.json()) as PredictResponse;
  } catch {
    throw new ApiError("malformed_response", "service returned an unreadable body");
  }
}
