export {
  EventShapeError,
  TERMINAL_KINDS,
  answerPayloadSchema,
  frameWireSchema,
  measurementWireSchema,
  parseEvent,
  searchHitSchema,
  sessionSummarySchema,
  traceEventSchema,
} from "./events.js";
export type {
  AnswerPayload,
  FrameWire,
  MeasurementWire,
  ParsedCall,
  ResultWire,
  SearchHit,
  SessionSummary,
  TraceEvent,
} from "./events.js";
export {
  StreamGapError,
  TimelineConflictError,
  applyEvent,
  emptyViewModel,
  isTerminal,
  reduceTimeline,
  timelineDigest,
} from "./timeline.js";
export type {
  AnswerCard,
  SessionHandle,
  SessionStatusName,
  SessionViewModel,
  StepCard,
} from "./timeline.js";
export {
  ConsoleClient,
  ServerRejection,
  StreamDropped,
  parseSseStream,
} from "./client.js";
export type { AttachOptions, FetchLike, SessionCreated, SessionRequest } from "./client.js";
export {
  PLACEHOLDER_SIZE,
  collectMeasurements,
  decodePixels,
  formatCaliperLabel,
  renderMeasurementOverlay,
} from "./overlay.js";
export type { Caliper, OverlayModel } from "./overlay.js";
export { emptyConsoleState, steerSession, updateTab } from "./steer.js";
export type { ConsoleState, SessionTab, SteerAction, SteerOutcome } from "./steer.js";
export {
  RenderError,
  buildCitationCards,
  renderCitationCards,
  renderMeasurementOverlayText,
  renderReviewerPanel,
  renderTraceTimeline,
} from "./render.js";
export type { CitationCard, ReviewerGold } from "./render.js";
