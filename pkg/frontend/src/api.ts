/** Thin typed client for the review-service JSON API.
 *
 * Every response is validated against the wire schema before it reaches the
 * UI; service-side errors carry their HTTP status and error code, transport
 * failures surface as NetworkError so the controller can distinguish
 * "the service said no" from "the service is unreachable".
 */
import { z } from "zod";

import {
  Aggregate,
  AggregateSchema,
  ErrorEnvelopeSchema,
  ExportResponse,
  ExportResponseSchema,
  NextResponseSchema,
  ReviewInstance,
  ReviewInstanceSchema,
  VerdictPayload,
  VerdictPayloadSchema,
} from "./model.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class NetworkError extends Error {
  constructor(message: string, readonly cause_?: unknown) {
    super(message);
    this.name = "NetworkError";
  }
}

async function parseBody(response: { status: number; json(): Promise<unknown> }): Promise<unknown> {
  try {
    return await response.json();
  } catch {
    throw new ApiError(response.status, "BadResponse", "response body is not JSON");
  }
}

export class ReviewApi {
  private readonly base: string;

  constructor(
    baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {
    this.base = baseUrl.replace(/\/+$/, "");
  }

  private async get<T>(path: string, schema: z.ZodType<T>): Promise<T> {
    let response;
    try {
      response = await this.fetchFn(this.base + path);
    } catch (err) {
      throw new NetworkError(`GET ${path} failed: ${String(err)}`, err);
    }
    const body = await parseBody(response);
    if (response.status !== 200) {
      throw toApiError(response.status, body);
    }
    return schema.parse(body);
  }

  /** Next assignment for the rater, or null when their queue is exhausted. */
  async next(raterId: string): Promise<ReviewInstance | null> {
    const parsed = await this.get(
      `/api/next?rater=${encodeURIComponent(raterId)}`,
      NextResponseSchema,
    );
    return parsed.instance;
  }

  /** Submit one verdict; returns the instance's updated aggregate. */
  async submitVerdict(payload: VerdictPayload): Promise<Aggregate> {
    VerdictPayloadSchema.parse(payload); // never let a malformed body out
    let response;
    try {
      response = await this.fetchFn(this.base + "/api/verdicts", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      });
    } catch (err) {
      throw new NetworkError(`POST /api/verdicts failed: ${String(err)}`, err);
    }
    const body = await parseBody(response);
    if (response.status !== 200) {
      throw toApiError(response.status, body);
    }
    return AggregateSchema.parse(body);
  }

  async instance(id: string): Promise<ReviewInstance> {
    return this.get(`/api/instances/${encodeURIComponent(id)}`, ReviewInstanceSchema);
  }

  async exportBenchmark(): Promise<ExportResponse> {
    return this.get("/api/export", ExportResponseSchema);
  }

  async health(): Promise<unknown> {
    return this.get("/healthz", z.unknown());
  }
}

function toApiError(status: number, body: unknown): ApiError {
  const parsed = ErrorEnvelopeSchema.safeParse(body);
  if (parsed.success) {
    return new ApiError(status, parsed.data.error.code, parsed.data.error.message);
  }
  return new ApiError(status, "UnknownError", `service returned HTTP ${status}`);
}
