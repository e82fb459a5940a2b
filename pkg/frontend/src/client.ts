/**
 * HTTP/SSE client for the session service.
 *
 * The console talks to the server exclusively through this module: plain
 * JSON endpoints for commands and lookups, and a resumable server-sent
 * event stream for traces. A dropped or gapped stream is always handled by
 * reconnecting with ?from=<next expected seq> and replaying; events are
 * never reordered client side.
 */
import {
  frameWireSchema,
  sessionSummarySchema,
  type FrameWire,
  type SessionSummary,
} from "./events.js";
import {
  applyEvent,
  emptyViewModel,
  isTerminal,
  StreamGapError,
  type SessionViewModel,
} from "./timeline.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** A 4xx/5xx reply; carries the server's own detail text for inline display. */
export class ServerRejection extends Error {
  constructor(readonly status: number, readonly detail: string, readonly url: string) {
    super(`${status} from ${url}: ${detail}`);
    this.name = "ServerRejection";
  }
}

/** The stream kept dropping without progress and retries ran out. */
export class StreamDropped extends Error {
  constructor(readonly sessionId: string, readonly attempts: number) {
    super(`stream for ${sessionId} dropped after ${attempts} reconnect attempts`);
    this.name = "StreamDropped";
  }
}

export interface SessionRequest {
  question: string;
  studyId: string;
  persona?: string;
  noise?: string;
  seed?: number;
  includeFeasibility?: boolean;
  includeRetrieval?: boolean;
  stepBudget?: number;
  contextSessionId?: string;
}

export interface SessionCreated {
  sessionId: string;
  eventsUrl: string;
}

export interface AttachOptions {
  /** Resume an existing view model instead of starting from scratch. */
  viewModel?: SessionViewModel;
  /** Called after every applied event with the updated view model. */
  onEvent?: (vm: SessionViewModel) => void;
  /** Reconnect attempts allowed without receiving a single new event. */
  maxIdleReconnects?: number;
}

interface SseFrame {
  id: string | null;
  data: string;
}

/**
 * Incremental SSE parser. Yields one frame per `data:` block; handles
 * frames split across arbitrary chunk boundaries.
 */
export async function* parseSseStream(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<SseFrame> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  try {
    while (true) {
      const { done, value } = await reader.read();
      if (done) {
        break;
      }
      buffer += decoder.decode(value, { stream: true });
      let cut: number;
      while ((cut = buffer.indexOf("\n\n")) !== -1) {
        const block = buffer.slice(0, cut);
        buffer = buffer.slice(cut + 2);
        const frame = parseBlock(block);
        if (frame !== null) {
          yield frame;
        }
      }
    }
    buffer += decoder.decode();
    const trailing = parseBlock(buffer);
    if (trailing !== null) {
      yield trailing;
    }
  } finally {
    reader.releaseLock();
  }
}

function parseBlock(block: string): SseFrame | null {
  let id: string | null = null;
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith("id:")) {
      id = line.slice(3).trim();
    } else if (line.startsWith("data:")) {
      data.push(line.slice(5).trimStart());
    }
  }
  if (data.length === 0) {
    return null;
  }
  return { id, data: data.join("\n") };
}

export class ConsoleClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl: FetchLike = globalThis.fetch) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl;
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const url = `${this.baseUrl}${path}`;
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(url, init);
    if (!response.ok) {
      throw new ServerRejection(response.status, await rejectionDetail(response), url);
    }
    return response.json();
  }

  async createSession(request: SessionRequest): Promise<SessionCreated> {
    const body: Record<string, unknown> = {
      question: request.question,
      study_id: request.studyId,
    };
    if (request.persona !== undefined) body.persona = request.persona;
    if (request.noise !== undefined) body.noise = request.noise;
    if (request.seed !== undefined) body.seed = request.seed;
    if (request.includeFeasibility !== undefined) body.include_feasibility = request.includeFeasibility;
    if (request.includeRetrieval !== undefined) body.include_retrieval = request.includeRetrieval;
    if (request.stepBudget !== undefined) body.step_budget = request.stepBudget;
    if (request.contextSessionId !== undefined) body.context_session_id = request.contextSessionId;
    const doc = (await this.request("POST", "/sessions", body)) as {
      session_id: string;
      events_url: string;
    };
    return { sessionId: doc.session_id, eventsUrl: doc.events_url };
  }

  async getSummary(sessionId: string): Promise<SessionSummary> {
    const doc = await this.request("GET", `/sessions/${sessionId}`);
    return sessionSummarySchema.parse(doc);
  }

  async abortSession(sessionId: string): Promise<{ sessionId: string; accepted: boolean }> {
    const doc = (await this.request("POST", `/sessions/${sessionId}/abort`)) as {
      session_id: string;
      accepted: boolean;
    };
    return { sessionId: doc.session_id, accepted: doc.accepted };
  }

  async listStudies(): Promise<unknown[]> {
    return (await this.request("GET", "/studies")) as unknown[];
  }

  async getFrame(studyId: string, frame: number): Promise<FrameWire> {
    const doc = await this.request("GET", `/studies/${studyId}/frames/${frame}`);
    return frameWireSchema.parse(doc);
  }

  async listTools(): Promise<unknown[]> {
    return (await this.request("GET", "/tools")) as unknown[];
  }

  async runBenchmark(body: Record<string, unknown>): Promise<unknown> {
    return this.request("POST", "/benchmarks/run", body);
  }

  /**
   * Open one event stream and yield raw decoded events from `from` on.
   * Ends when the server closes the stream (after a terminal event, or on
   * a drop); the caller decides whether to resume.
   */
  async *streamEvents(sessionId: string, from = 0): AsyncGenerator<unknown> {
    const url = `${this.baseUrl}/sessions/${sessionId}/events?from=${from}`;
    const response = await this.fetchImpl(url, { method: "GET" });
    if (!response.ok) {
      throw new ServerRejection(response.status, await rejectionDetail(response), url);
    }
    if (response.body === null) {
      return;
    }
    for await (const frame of parseSseStream(response.body)) {
      yield JSON.parse(frame.data);
    }
  }

  /**
   * Follow a session to its terminal event, reconnecting and replaying
   * from the last applied sequence number whenever the stream drops or
   * gaps. Returns the final view model.
   */
  async attachSession(sessionId: string, options: AttachOptions = {}): Promise<SessionViewModel> {
    let vm = options.viewModel ?? emptyViewModel(sessionId);
    const maxIdle = options.maxIdleReconnects ?? 5;
    let idleAttempts = 0;
    while (!isTerminal(vm)) {
      const resumeFrom = vm.nextSeq;
      try {
        for await (const raw of this.streamEvents(sessionId, resumeFrom)) {
          vm = applyEvent(vm, raw);
          options.onEvent?.(vm);
        }
      } catch (err) {
        if (!(err instanceof StreamGapError)) {
          throw err;
        }
        // fall through: reconnect replays from vm.nextSeq, closing the gap
      }
      if (isTerminal(vm)) {
        break;
      }
      idleAttempts = vm.nextSeq > resumeFrom ? 0 : idleAttempts + 1;
      if (idleAttempts > maxIdle) {
        throw new StreamDropped(sessionId, idleAttempts);
      }
    }
    return vm;
  }
}

async function rejectionDetail(response: Response): Promise<string> {
  try {
    const doc = (await response.json()) as { detail?: unknown };
    if (doc && doc.detail !== undefined) {
      return typeof doc.detail === "string" ? doc.detail : JSON.stringify(doc.detail);
    }
    return JSON.stringify(doc);
  } catch {
    return response.statusText || "request rejected";
  }
}
