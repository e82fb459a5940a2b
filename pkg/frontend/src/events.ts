/**
 * Wire schemas for everything the console receives from the session service.
 *
 * Every shape here is validated with zod before it reaches the view model,
 * so a malformed frame fails loudly instead of rendering invented data.
 */
import { z } from "zod";

const eventBase = {
  session_id: z.string(),
  seq: z.number().int().nonnegative(),
};

export const parsedCallSchema = z.object({
  name: z.string(),
  arguments: z.record(z.string(), z.unknown()),
});

export const okResultSchema = z.object({
  ok: z.literal(true),
  result: z.unknown(),
});

export const errorResultSchema = z.object({
  ok: z.literal(false),
  error: z.string(),
  detail: z.string(),
});

export const resultWireSchema = z.union([okResultSchema, errorResultSchema]);

export const answerPayloadSchema = z.object({
  text: z.string(),
  cited_values: z.array(
    z.object({
      value: z.number(),
      unit: z.string().nullable(),
      source_index: z.number().int(),
    }),
  ),
  cited_passages: z.array(z.string()),
  grounded: z.boolean(),
  ungrounded_values: z.array(z.number()),
});

export const traceEventSchema = z.discriminatedUnion("kind", [
  z.object({
    ...eventBase,
    kind: z.literal("session_started"),
    payload: z.object({
      question: z.string(),
      study_id: z.string(),
      step_budget: z.number().int().positive(),
    }),
  }),
  z.object({
    ...eventBase,
    kind: z.literal("thought"),
    payload: z.object({ step: z.number().int().nonnegative(), text: z.string() }),
  }),
  z.object({
    ...eventBase,
    kind: z.literal("tool_call"),
    payload: z.object({
      step: z.number().int().nonnegative(),
      raw: z.string(),
      parsed: parsedCallSchema.nullable(),
    }),
  }),
  z.object({
    ...eventBase,
    kind: z.literal("tool_result"),
    payload: z.object({
      step: z.number().int().nonnegative(),
      result: resultWireSchema,
    }),
  }),
  z.object({ ...eventBase, kind: z.literal("finish"), payload: answerPayloadSchema }),
  z.object({ ...eventBase, kind: z.literal("forced_answer"), payload: answerPayloadSchema }),
  z.object({
    ...eventBase,
    kind: z.literal("aborted"),
    payload: z.object({ reason: z.string() }),
  }),
]);

export type TraceEvent = z.infer<typeof traceEventSchema>;
export type AnswerPayload = z.infer<typeof answerPayloadSchema>;
export type ParsedCall = z.infer<typeof parsedCallSchema>;
export type ResultWire = z.infer<typeof resultWireSchema>;

export const TERMINAL_KINDS: ReadonlySet<TraceEvent["kind"]> = new Set([
  "finish",
  "forced_answer",
  "aborted",
]);

/** Payload of a successful `measure` call; the source of every caliper. */
export const measurementWireSchema = z.object({
  kind: z.string(),
  frame: z.number().int().nonnegative(),
  value_cm: z.number(),
  endpoints_px: z.tuple([
    z.tuple([z.number(), z.number()]),
    z.tuple([z.number(), z.number()]),
  ]),
});

export type MeasurementWire = z.infer<typeof measurementWireSchema>;

export const searchHitSchema = z.object({
  passage_id: z.string(),
  doc_id: z.string(),
  rank: z.number().int(),
  score: z.number(),
  text: z.string(),
});

export type SearchHit = z.infer<typeof searchHitSchema>;

export const frameWireSchema = z.object({
  study_id: z.string(),
  frame: z.number().int().nonnegative(),
  height: z.number().int().positive(),
  width: z.number().int().positive(),
  encoding: z.literal("base64/uint8"),
  pixels: z.string(),
});

export type FrameWire = z.infer<typeof frameWireSchema>;

export const sessionSummarySchema = z.object({
  session_id: z.string(),
  question: z.string(),
  study_id: z.string(),
  status: z.string(),
  steps: z.number().int().nonnegative(),
  event_count: z.number().int().nonnegative(),
  answer: answerPayloadSchema.nullable(),
  error: z.string().nullable(),
});

export type SessionSummary = z.infer<typeof sessionSummarySchema>;

/** Raised when a received frame does not match the wire contract. */
export class EventShapeError extends Error {
  constructor(message: string, readonly raw: unknown) {
    super(message);
    this.name = "EventShapeError";
  }
}

export function parseEvent(raw: unknown): TraceEvent {
  const outcome = traceEventSchema.safeParse(raw);
  if (!outcome.success) {
    throw new EventShapeError(`unrecognised trace event: ${outcome.error.message}`, raw);
  }
  return outcome.data;
}
