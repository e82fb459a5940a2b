/**
 * Test scaffolding: fixture loading and a scripted fake of the session
 * service, good enough to exercise the client's HTTP + SSE paths without
 * a network.
 */
import { readFileSync } from "node:fs";

import type { FetchLike } from "../src/client.js";

export interface RecordedSession {
  summary: Record<string, unknown> & { session_id: string };
  events: Record<string, unknown>[];
}

export function loadFixture<T>(name: string): T {
  const url = new URL(`./fixtures/${name}`, import.meta.url);
  return JSON.parse(readFileSync(url, "utf8")) as T;
}

export function loadSession(name: string): RecordedSession {
  return loadFixture<RecordedSession>(name);
}

/** Serialize events the way the server does: id line, data line, blank. */
export function sseText(events: readonly Record<string, unknown>[]): string {
  return events.map((event) => `id: ${event.seq}\ndata: ${JSON.stringify(event)}\n\n`).join("");
}

/** Chunk a string into a byte stream, splitting at awkward boundaries. */
export function chunkedStream(text: string, chunkSize = 7): ReadableStream<Uint8Array> {
  const bytes = new TextEncoder().encode(text);
  let offset = 0;
  return new ReadableStream<Uint8Array>({
    pull(controller) {
      if (offset >= bytes.length) {
        controller.close();
        return;
      }
      controller.enqueue(bytes.slice(offset, offset + chunkSize));
      offset += chunkSize;
    },
  });
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export function sseResponse(events: readonly Record<string, unknown>[], chunkSize = 7): Response {
  return new Response(chunkedStream(sseText(events), chunkSize), {
    status: 200,
    headers: { "content-type": "text/event-stream" },
  });
}

export type RouteHandler = (url: URL, init?: RequestInit) => Response | Promise<Response>;

/**
 * Build a FetchLike from a route table keyed by "METHOD /path". Query
 * strings are stripped before lookup; handlers get the full URL.
 */
export function fakeFetch(routes: Record<string, RouteHandler>): FetchLike & { calls: string[] } {
  const calls: string[] = [];
  const impl = (async (input: string, init?: RequestInit) => {
    const url = new URL(input, "http://testhost");
    const key = `${init?.method ?? "GET"} ${url.pathname}`;
    calls.push(key + url.search);
    const handler = routes[key];
    if (handler === undefined) {
      return jsonResponse(404, { detail: `no route ${key}` });
    }
    return handler(url, init);
  }) as FetchLike & { calls: string[] };
  impl.calls = calls;
  return impl;
}

/**
 * Fake events endpoint that drops the connection after `dropAfter` events
 * on the first request, then serves complete replays. Honors ?from=.
 */
export function droppingEventsRoute(
  events: readonly Record<string, unknown>[],
  dropAfter: number,
): { handler: RouteHandler; requests: number[] } {
  const requests: number[] = [];
  const handler: RouteHandler = (url) => {
    const from = Number(url.searchParams.get("from") ?? "0");
    requests.push(from);
    const tail = events.filter((event) => (event.seq as number) >= from);
    const slice = requests.length === 1 ? tail.slice(0, dropAfter) : tail;
    return sseResponse(slice);
  };
  return { handler, requests };
}
