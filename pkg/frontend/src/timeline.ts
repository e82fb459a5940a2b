/**
 * Pure timeline reducer: ordered trace events in, session view model out.
 *
 * The reducer never reorders, drops, or fabricates anything. Events must
 * arrive with contiguous sequence numbers starting at zero; a gap raises
 * StreamGapError so the caller can reconnect and replay, and a conflicting
 * duplicate raises TimelineConflictError rather than silently rewriting
 * history. Replaying an already-applied event is a no-op, which is what
 * makes reconnect-and-replay safe.
 */
import { parseEvent, TERMINAL_KINDS, type AnswerPayload, type TraceEvent } from "./events.js";

export type SessionStatusName =
  | "pending"
  | "running"
  | "finished"
  | "budget_exhausted"
  | "aborted";

/** Mirror of the server-side session handle, filled in as events arrive. */
export interface SessionHandle {
  sessionId: string;
  question: string | null;
  studyId: string | null;
  stepBudget: number | null;
  status: SessionStatusName;
}

/** One observe-think-act triad, built from thought/tool_call/tool_result. */
export interface StepCard {
  step: number;
  thought: string | null;
  toolName: string | null;
  args: Record<string, unknown> | null;
  rawCall: string | null;
  ok: boolean | null;
  resultPayload: unknown;
  error: { kind: string; detail: string } | null;
  complete: boolean;
}

export interface AnswerCard {
  kind: "finish" | "forced_answer";
  text: string;
  citedValues: { value: number; unit: string | null; sourceIndex: number }[];
  citedPassages: string[];
  grounded: boolean;
  ungroundedValues: number[];
  closingThought: string | null;
}

export interface SessionViewModel {
  handle: SessionHandle;
  /** Verbatim event list; events[i].seq === i always holds. */
  events: TraceEvent[];
  steps: StepCard[];
  answer: AnswerCard | null;
  abortedCard: { reason: string } | null;
  nextSeq: number;
}

export class StreamGapError extends Error {
  constructor(readonly expectedSeq: number, readonly receivedSeq: number) {
    super(`event gap: expected seq ${expectedSeq}, received ${receivedSeq}`);
    this.name = "StreamGapError";
  }
}

export class TimelineConflictError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TimelineConflictError";
  }
}

export function emptyViewModel(sessionId: string): SessionViewModel {
  return {
    handle: {
      sessionId,
      question: null,
      studyId: null,
      stepBudget: null,
      status: "pending",
    },
    events: [],
    steps: [],
    answer: null,
    abortedCard: null,
    nextSeq: 0,
  };
}

export function isTerminal(vm: SessionViewModel): boolean {
  return vm.answer !== null || vm.abortedCard !== null;
}

function answerCard(kind: "finish" | "forced_answer", payload: AnswerPayload, closingThought: string | null): AnswerCard {
  return {
    kind,
    text: payload.text,
    citedValues: payload.cited_values.map((cv) => ({
      value: cv.value,
      unit: cv.unit,
      sourceIndex: cv.source_index,
    })),
    citedPassages: [...payload.cited_passages],
    grounded: payload.grounded,
    ungroundedValues: [...payload.ungrounded_values],
    closingThought,
  };
}

function cardForStep(steps: StepCard[], step: number): StepCard {
  const last = steps[steps.length - 1];
  if (last !== undefined && last.step === step) {
    return last;
  }
  const card: StepCard = {
    step,
    thought: null,
    toolName: null,
    args: null,
    rawCall: null,
    ok: null,
    resultPayload: null,
    error: null,
    complete: false,
  };
  steps.push(card);
  return card;
}

/**
 * Apply one raw event to a view model, returning a new view model.
 *
 * `raw` may be anything pulled off the stream; it is validated first.
 * Duplicates of already-applied events are tolerated only when they are
 * byte-identical to what was applied before.
 */
export function applyEvent(vm: SessionViewModel, raw: unknown): SessionViewModel {
  const event = parseEvent(raw);
  if (event.session_id !== vm.handle.sessionId) {
    throw new TimelineConflictError(
      `event for session ${event.session_id} applied to timeline of ${vm.handle.sessionId}`,
    );
  }
  if (event.seq < vm.nextSeq) {
    const seen = vm.events[event.seq];
    if (JSON.stringify(seen) !== JSON.stringify(event)) {
      throw new TimelineConflictError(`replayed event ${event.seq} does not match the original`);
    }
    return vm; // idempotent replay
  }
  if (event.seq > vm.nextSeq) {
    throw new StreamGapError(vm.nextSeq, event.seq);
  }
  if (isTerminal(vm)) {
    throw new TimelineConflictError(`event seq ${event.seq} after terminal event`);
  }

  const next: SessionViewModel = {
    handle: { ...vm.handle },
    events: [...vm.events, event],
    steps: vm.steps.map((card) => ({ ...card })),
    answer: vm.answer,
    abortedCard: vm.abortedCard,
    nextSeq: vm.nextSeq + 1,
  };

  switch (event.kind) {
    case "session_started": {
      next.handle.question = event.payload.question;
      next.handle.studyId = event.payload.study_id;
      next.handle.stepBudget = event.payload.step_budget;
      next.handle.status = "running";
      break;
    }
    case "thought": {
      const card = cardForStep(next.steps, event.payload.step);
      card.thought = event.payload.text;
      break;
    }
    case "tool_call": {
      const card = cardForStep(next.steps, event.payload.step);
      card.rawCall = event.payload.raw;
      if (event.payload.parsed !== null) {
        card.toolName = event.payload.parsed.name;
        card.args = event.payload.parsed.arguments;
      }
      break;
    }
    case "tool_result": {
      const card = cardForStep(next.steps, event.payload.step);
      const result = event.payload.result;
      if (result.ok) {
        card.ok = true;
        card.resultPayload = result.result;
      } else {
        card.ok = false;
        card.error = { kind: result.error, detail: result.detail };
      }
      card.complete = true;
      break;
    }
    case "finish":
    case "forced_answer": {
      // A trailing thought with no tool call is the model's sign-off (the
      // FINISH turn); it belongs to the answer card, not to a step card.
      let closing: string | null = null;
      const last = next.steps[next.steps.length - 1];
      if (last !== undefined && !last.complete && last.toolName === null && last.rawCall === null) {
        closing = last.thought;
        next.steps.pop();
      }
      next.answer = answerCard(event.kind, event.payload, closing);
      next.handle.status = event.kind === "finish" ? "finished" : "budget_exhausted";
      break;
    }
    case "aborted": {
      next.abortedCard = { reason: event.payload.reason };
      next.handle.status = "aborted";
      break;
    }
  }
  return next;
}

/** Fold a full event log into a view model in one call. */
export function reduceTimeline(sessionId: string, events: readonly unknown[]): SessionViewModel {
  let vm = emptyViewModel(sessionId);
  for (const event of events) {
    vm = applyEvent(vm, event);
  }
  return vm;
}

/**
 * Canonical serialisation used to compare timelines; two view models built
 * from the same events are equal byte for byte.
 */
export function timelineDigest(vm: SessionViewModel): string {
  return JSON.stringify({
    handle: vm.handle,
    events: vm.events,
    steps: vm.steps,
    answer: vm.answer,
    abortedCard: vm.abortedCard,
  });
}

export { TERMINAL_KINDS };
