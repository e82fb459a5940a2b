/**
 * Secondary acceptance gate.
 *
 * S1: replaying a recorded 4-step session's event log renders 4 step cards
 *     plus 1 answer card in sequence order, and a mid-stream disconnect
 *     followed by replay yields an identical timeline.
 * S2: abort on a live slow-scripted session produces the aborted terminal
 *     card within one event round trip, and a follow-up opens a new session
 *     referencing the prior answer.
 *
 * Every session fixture is a verbatim recording of the HTTP service wire
 * (see fixtures/record_fixtures.py); the fake server here only schedules
 * delivery, it never makes events up.
 */
import { describe, expect, it } from "vitest";

import { ConsoleClient } from "../src/client.js";
import { renderTraceTimeline } from "../src/render.js";
import { emptyConsoleState, steerSession, updateTab } from "../src/steer.js";
import {
  reduceTimeline,
  timelineDigest,
  type SessionViewModel,
} from "../src/timeline.js";
import {
  droppingEventsRoute,
  fakeFetch,
  jsonResponse,
  loadFixture,
  loadSession,
  sseResponse,
  sseText,
  type RecordedSession,
} from "./helpers.js";

const fourStep = loadSession("four-step-session.json");
const abortedRecording = loadSession("aborted-session.json");
const followUpPair = loadFixture<{ first: RecordedSession; second: RecordedSession }>(
  "follow-up-pair.json",
);

async function waitFor(check: () => boolean, timeoutMs = 2000): Promise<void> {
  const start = Date.now();
  while (!check()) {
    if (Date.now() - start > timeoutMs) {
      throw new Error("condition not met in time");
    }
    await new Promise((resolve) => setTimeout(resolve, 5));
  }
}

describe("S1 trace fidelity", () => {
  it("renders 4 step cards + 1 answer card from the recorded log, in order", () => {
    const vm = reduceTimeline(fourStep.summary.session_id, fourStep.events);

    expect(fourStep.summary.steps).toBe(4);
    expect(vm.steps.length).toBe(4);
    expect(vm.steps.every((card) => card.complete)).toBe(true);
    expect(vm.answer).not.toBeNull();
    expect(vm.abortedCard).toBeNull();

    // Sequence order: the event list mirrors server seq numbers and the
    // cards read out in ascending step order.
    vm.events.forEach((event, i) => expect(event.seq).toBe(i));
    expect(vm.steps.map((card) => card.step)).toEqual([0, 1, 2, 3]);
    const lines = renderTraceTimeline(vm);
    const cardLines = lines.filter((l) => l.startsWith("[step ") || l.startsWith("=== "));
    expect(cardLines).toEqual(["[step 0]", "[step 1]", "[step 2]", "[step 3]", "=== answer ==="]);

    console.log("S1 PASS: recorded 4-step replay -> 4 step cards + 1 answer card in order");
  });

  it("yields an identical timeline after a mid-stream disconnect and replay", async () => {
    const sessionId = fourStep.summary.session_id;
    const oneShot = reduceTimeline(sessionId, fourStep.events);

    for (const dropAfter of [2, 5, 7, 11]) {
      const { handler, requests } = droppingEventsRoute(fourStep.events, dropAfter);
      const client = new ConsoleClient(
        "http://testhost",
        fakeFetch({ [`GET /sessions/${sessionId}/events`]: handler }),
      );
      const vm = await client.attachSession(sessionId);
      expect(requests.length).toBe(2);
      expect(requests[1]).toBe(dropAfter); // replay from last applied seq
      expect(timelineDigest(vm)).toBe(timelineDigest(oneShot));
    }

    console.log("S1 PASS: disconnect at 4 cut points -> replay rebuilt identical timelines");
  });
});

describe("S2 steering", () => {
  it("abort on a live gated session shows the aborted card within one round trip", async () => {
    const sessionId = abortedRecording.summary.session_id;
    const preAbort = abortedRecording.events.slice(0, 4); // started + one full triad
    const terminal = abortedRecording.events[4];
    expect(terminal.kind).toBe("aborted");

    const encoder = new TextEncoder();
    let controller: ReadableStreamDefaultController<Uint8Array> | null = null;
    const live = new ReadableStream<Uint8Array>({
      start(c) {
        controller = c;
        c.enqueue(encoder.encode(sseText(preAbort)));
        // stream now idles: the scripted backend is holding the session
      },
    });
    let abortPosted = false;
    const fetchImpl = fakeFetch({
      "POST /sessions": () =>
        jsonResponse(201, { session_id: sessionId, events_url: `/sessions/${sessionId}/events` }),
      [`GET /sessions/${sessionId}/events`]: () =>
        new Response(live, { status: 200, headers: { "content-type": "text/event-stream" } }),
      [`POST /sessions/${sessionId}/abort`]: () => {
        abortPosted = true;
        controller?.enqueue(encoder.encode(sseText([terminal])));
        controller?.close();
        return jsonResponse(200, { session_id: sessionId, accepted: true });
      },
    });
    const client = new ConsoleClient("http://testhost", fetchImpl);

    let state = emptyConsoleState();
    const submitted = await steerSession(client, state, {
      type: "submit",
      request: { question: "Measure the IVS at end-diastole.", studyId: "study_demo" },
    });
    expect(submitted.rejection).toBeNull();
    state = submitted.state;

    const applied: SessionViewModel[] = [];
    const attached = client.attachSession(sessionId, {
      onEvent: (vm) => applied.push(vm),
    });
    await waitFor(() => applied.length === preAbort.length);
    expect(applied[applied.length - 1].abortedCard).toBeNull(); // still live

    const abortOutcome = await steerSession(client, state, { type: "abort", sessionId });
    expect(abortOutcome.rejection).toBeNull();
    expect(abortPosted).toBe(true);

    const finalVm = await attached;
    state = updateTab(state, finalVm);

    // exactly one more event arrived after the abort command: the terminal card
    expect(applied.length).toBe(preAbort.length + 1);
    expect(finalVm.abortedCard).toEqual({ reason: "abort requested" });
    expect(finalVm.handle.status).toBe("aborted");
    expect(renderTraceTimeline(finalVm)).toContain("=== aborted: abort requested ===");

    console.log("S2 PASS: abort -> aborted terminal card within one event round trip");
  });

  it("follow-up opens a new session that references the prior answer", async () => {
    const first = followUpPair.first;
    const second = followUpPair.second;
    const firstId = first.summary.session_id;
    const secondId = second.summary.session_id;

    let createdBody: Record<string, unknown> = {};
    const fetchImpl = fakeFetch({
      "POST /sessions": (_url, init) => {
        createdBody = JSON.parse(String(init?.body));
        return jsonResponse(201, {
          session_id: secondId,
          events_url: `/sessions/${secondId}/events`,
        });
      },
      [`GET /sessions/${secondId}/events`]: (url) => {
        const from = Number(url.searchParams.get("from") ?? "0");
        return sseResponse(second.events.filter((e) => (e.seq as number) >= from));
      },
    });
    const client = new ConsoleClient("http://testhost", fetchImpl);

    // console already holds the finished first exchange
    const firstVm = reduceTimeline(firstId, first.events);
    const priorAnswer = firstVm.answer?.text ?? "";
    expect(priorAnswer).toBe("IVS at end-diastole: 1.00 cm.");
    let state = { tabs: [{ viewModel: firstVm, eventsUrl: "", followUpOf: null }] };

    const outcome = await steerSession(client, state, {
      type: "follow_up",
      sessionId: firstId,
      question: "And at end-systole?",
    });
    expect(outcome.rejection).toBeNull();
    expect(createdBody.context_session_id).toBe(firstId);
    state = outcome.state as typeof state;
    expect(state.tabs.length).toBe(2);
    expect(state.tabs[1].followUpOf).toBe(firstId);

    const followVm = await client.attachSession(secondId);
    // the new session's query context references the prior answer verbatim
    expect(followVm.handle.question).toContain(`Previous answer: ${priorAnswer}`);
    expect(followVm.handle.question?.endsWith("Current question: And at end-systole?")).toBe(true);
    expect(followVm.answer?.text).toBe("IVS at end-systole: 1.30 cm.");

    console.log("S2 PASS: follow-up session carries the prior answer in its query context");
  });
});
