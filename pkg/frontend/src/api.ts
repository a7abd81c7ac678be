// REST access to a node.  All traffic flows through one injectable
// fetch so tests can capture and byte-scan every request the browser
// would send.

import { CanonicalValue } from "./canonical.js";
import { Envelope } from "./wire.js";

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

export interface WireMessage {
  key: string;
  ts: number; // precision-lossy; use `key` for exact cursors
  message: string;
}

export class NodeApi {
  constructor(
    private nodeAddress: string,
    private fetchImpl: FetchLike = globalThis.fetch as unknown as FetchLike,
  ) {}

  private url(path: string): string {
    return `http://${this.nodeAddress}${path}`;
  }

  private async decode(resp: { status: number; json(): Promise<unknown> }): Promise<Record<string, unknown>> {
    let body: unknown;
    try {
      body = await resp.json();
    } catch {
      throw new ApiError("network", `node returned non-JSON (${resp.status})`, resp.status);
    }
    const obj = body as Record<string, unknown>;
    if (resp.status >= 400) {
      const err = obj?.error as { code?: string; message?: string } | undefined;
      throw new ApiError(err?.code ?? "error", err?.message ?? `status ${resp.status}`, resp.status);
    }
    return obj;
  }

  async post(path: string, envelope: Envelope): Promise<Record<string, unknown>> {
    let resp;
    try {
      resp = await this.fetchImpl(this.url(path), {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(envelope),
      });
    } catch (e) {
      throw new ApiError("network", `node unreachable: ${e}`, 0);
    }
    return this.decode(resp);
  }

  async readMessages(
    channelId: string,
    sinceTs: bigint,
    headers: Record<string, string>,
  ): Promise<WireMessage[]> {
    let resp;
    try {
      resp = await this.fetchImpl(
        this.url(`/channels/${channelId}/messages?ts=${sinceTs.toString()}`),
        { headers },
      );
    } catch (e) {
      throw new ApiError("network", `node unreachable: ${e}`, 0);
    }
    const obj = await this.decode(resp);
    return (obj.messages ?? []) as WireMessage[];
  }

  async healthz(): Promise<Record<string, unknown>> {
    let resp;
    try {
      resp = await this.fetchImpl(this.url("/healthz"));
    } catch (e) {
      throw new ApiError("network", `node unreachable: ${e}`, 0);
    }
    return this.decode(resp);
  }
}

export type { CanonicalValue };
