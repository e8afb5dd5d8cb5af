import { afterEach, describe, expect, it, vi } from "vitest";

import { HealthMonitor, UploadController } from "../src/app.js";
import type { UploadFile } from "../src/app.js";
import type { AppConfig } from "../src/config.js";
import type { UploadState } from "../src/state.js";

const cfg: AppConfig = {
  apiBase: "http://service.test",
  maxUploadBytes: 5 * 1024 * 1024,
  healthPollIntervalMs: 30_000,
  healthTimeoutMs: 1_000,
};

const goodBody = {
  probability_patient: 0.92,
  label: "patient",
  model_arch: "custom_cnn",
  model_checksum: "0aae890b",
  preprocess_echo: { canvas_w: 128 },
};

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function makeFile(size = 1024, name = "loop.png"): UploadFile {
  return { name, size, blob: new Blob([new Uint8Array(16)]) };
}

function track(): { states: UploadState[]; onChange: (s: UploadState) => void } {
  const states: UploadState[] = [];
  return { states, onChange: (s) => states.push(s) };
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("upload flow against a mocked service", () => {
  it("reaches done with the parsed score", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse(200, goodBody));
    vi.stubGlobal("fetch", fetchMock);
    const { states, onChange } = track();
    const controller = new UploadController(cfg, onChange);
    await controller.submit(makeFile());
    expect(states.map((s) => s.phase)).toEqual(["uploading", "done"]);
    expect(controller.state.response?.probability_patient).toBe(0.92);
    expect(fetchMock).toHaveBeenCalledOnce();
    const [url, init] = fetchMock.mock.calls[0] as [string, RequestInit];
    expect(url).toBe("http://service.test/api/v1/predict");
    expect(init.method).toBe("POST");
  });

  it("blocks oversized files before any request is sent", async () => {
    const fetchMock = vi.fn();
    vi.stubGlobal("fetch", fetchMock);
    const controller = new UploadController(cfg, () => {});
    const started = await controller.submit(makeFile(cfg.maxUploadBytes + 1, "big.png"));
    expect(started).toBe(false);
    expect(controller.state.phase).toBe("error");
    expect(controller.state.errorCode).toBe("file_too_large");
    expect(fetchMock).not.toHaveBeenCalled();
  });

  it("maps a service error body to its code", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn().mockResolvedValue(jsonResponse(400, { error: "no_ink", message: "blank page" })),
    );
    const controller = new UploadController(cfg, () => {});
    await controller.submit(makeFile());
    expect(controller.state.phase).toBe("error");
    expect(controller.state.errorCode).toBe("no_ink");
  });

  it("turns a network failure into a retriable error state", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("fetch failed")));
    const controller = new UploadController(cfg, () => {});
    await controller.submit(makeFile());
    expect(controller.state.phase).toBe("error");
    expect(controller.state.errorCode).toBe("network_error");
    controller.reset();
    expect(controller.state.phase).toBe("idle");
  });

  it("rejects an out-of-range probability as malformed", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn().mockResolvedValue(jsonResponse(200, { ...goodBody, probability_patient: 4.2 })),
    );
    const controller = new UploadController(cfg, () => {});
    await controller.submit(makeFile());
    expect(controller.state.phase).toBe("error");
    expect(controller.state.errorCode).toBe("malformed_response");
  });

  it("allows only one in-flight upload", async () => {
    let release: (value: Response) => void = () => {};
    const gate = new Promise<Response>((resolve) => {
      release = resolve;
    });
    vi.stubGlobal("fetch", vi.fn().mockReturnValue(gate));
    const controller = new UploadController(cfg, () => {});
    const first = controller.submit(makeFile());
    const second = await controller.submit(makeFile());
    expect(second).toBe(false);
    release(jsonResponse(200, goodBody));
    expect(await first).toBe(true);
    expect(controller.state.phase).toBe("done");
  });
});

describe("health monitor", () => {
  const health = {
    status: "ok",
    model_arch: "custom_cnn",
    model_checksum: "aaaa0000",
    uptime_seconds: 1.5,
  };

  it("reports healthy with the service identity", async () => {
    vi.stubGlobal("fetch", vi.fn().mockResolvedValue(jsonResponse(200, health)));
    const status = await new HealthMonitor(cfg).poll();
    expect(status.kind).toBe("healthy");
    expect(status.health?.model_checksum).toBe("aaaa0000");
  });

  it("reports offline when the service is unreachable", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("down")));
    const status = await new HealthMonitor(cfg).poll();
    expect(status.kind).toBe("offline");
    expect(status.health).toBeNull();
  });

  it("flags a checksum change between polls as a model update", async () => {
    const fetchMock = vi
      .fn()
      .mockResolvedValueOnce(jsonResponse(200, health))
      .mockResolvedValueOnce(jsonResponse(200, { ...health, model_checksum: "bbbb1111" }));
    vi.stubGlobal("fetch", fetchMock);
    const monitor = new HealthMonitor(cfg);
    expect((await monitor.poll()).kind).toBe("healthy");
    const second = await monitor.poll();
    expect(second.kind).toBe("updated");
    expect(second.health?.model_checksum).toBe("bbbb1111");
  });

  it("treats a slow health endpoint as offline", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn().mockImplementation(
        (_url: string, init?: RequestInit) =>
          new Promise<Response>((_resolve, reject) => {
            init?.signal?.addEventListener("abort", () =>
              reject(new DOMException("aborted", "AbortError")),
            );
          }),
      ),
    );
    const fast = { ...cfg, healthTimeoutMs: 20 };
    const status = await new HealthMonitor(fast).poll();
    expect(status.kind).toBe("offline");
  });
});
