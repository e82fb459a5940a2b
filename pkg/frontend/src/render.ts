/**
 * Plain-text renderers for the console. Every line is derived from
 * received events or frame payloads; nothing is synthesised.
 */
import type { SearchHit } from "./events.js";
import { searchHitSchema } from "./events.js";
import type { OverlayModel } from "./overlay.js";
import type { SessionViewModel, StepCard } from "./timeline.js";

export class RenderError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "RenderError";
  }
}

const RESULT_PREVIEW_CHARS = 96;

function preview(payload: unknown): string {
  const text = JSON.stringify(payload);
  if (text === undefined) {
    return "null";
  }
  return text.length > RESULT_PREVIEW_CHARS ? `${text.slice(0, RESULT_PREVIEW_CHARS)}...` : text;
}

function stepLines(card: StepCard): string[] {
  const lines = [`[step ${card.step}]`];
  if (card.thought !== null) {
    lines.push(`  thought: ${card.thought}`);
  }
  if (card.toolName !== null) {
    lines.push(`  call: ${card.toolName} ${JSON.stringify(card.args)}`);
  } else if (card.rawCall !== null) {
    lines.push(`  call: (unparseable model output)`);
  }
  if (card.error !== null) {
    lines.push(`  !! ERROR ${card.error.kind}: ${card.error.detail}`);
  } else if (card.ok === true) {
    lines.push(`  result: ${preview(card.resultPayload)}`);
  } else if (!card.complete) {
    lines.push(`  ... waiting for result`);
  }
  return lines;
}

/**
 * Render the full trace timeline as lines of text: one card per completed
 * or in-flight step, then the terminal card. Error results are marked with
 * a `!! ERROR <kind>` line so invalid tool calls stay visible.
 */
export function renderTraceTimeline(vm: SessionViewModel): string[] {
  if (vm.events.length === 0) {
    throw new RenderError("no events received yet");
  }
  const lines: string[] = [
    `session ${vm.handle.sessionId}  study ${vm.handle.studyId ?? "?"}  status ${vm.handle.status}`,
  ];
  if (vm.handle.question !== null) {
    lines.push(`question: ${vm.handle.question}`);
  }
  for (const card of vm.steps) {
    lines.push(...stepLines(card));
  }
  if (vm.answer !== null) {
    const header = vm.answer.kind === "finish" ? "answer" : "forced answer (budget exhausted)";
    lines.push(`=== ${header} ===`);
    if (vm.answer.closingThought !== null) {
      lines.push(`  thought: ${vm.answer.closingThought}`);
    }
    lines.push(vm.answer.text);
    lines.push(`grounded: ${vm.answer.grounded ? "yes" : "NO"}`);
    if (vm.answer.ungroundedValues.length > 0) {
      lines.push(`ungrounded values: ${vm.answer.ungroundedValues.join(", ")}`);
    }
    for (const cv of vm.answer.citedValues) {
      const unit = cv.unit === null ? "" : ` ${cv.unit}`;
      lines.push(`cited: ${cv.value}${unit} (step ${cv.sourceIndex})`);
    }
  }
  if (vm.abortedCard !== null) {
    lines.push(`=== aborted: ${vm.abortedCard.reason} ===`);
  }
  return lines;
}

export interface CitationCard {
  passageId: string;
  docId: string;
  /** Character offset span inside the source document, from the passage id. */
  span: string;
  /** Passage text when a search result carrying it was observed. */
  text: string | null;
}

/**
 * Join the answer's cited passage ids against the search hits seen in the
 * trace. Passages the console never received render without text rather
 * than being fabricated.
 */
export function buildCitationCards(vm: SessionViewModel): CitationCard[] {
  if (vm.answer === null) {
    return [];
  }
  const hits = new Map<string, SearchHit>();
  for (const card of vm.steps) {
    if (card.toolName !== "search_guideline" || card.ok !== true) {
      continue;
    }
    const payload = card.resultPayload as { hits?: unknown[] } | null;
    for (const raw of payload?.hits ?? []) {
      const parsed = searchHitSchema.safeParse(raw);
      if (parsed.success) {
        hits.set(parsed.data.passage_id, parsed.data);
      }
    }
  }
  return vm.answer.citedPassages.map((passageId) => {
    const hit = hits.get(passageId) ?? null;
    const colon = passageId.lastIndexOf(":");
    const docId = colon === -1 ? passageId : passageId.slice(0, colon);
    const start = colon === -1 ? "" : passageId.slice(colon + 1);
    const span =
      hit !== null && start !== "" ? `${start}..${Number(start) + hit.text.length}` : start;
    return { passageId, docId, span, text: hit?.text ?? null };
  });
}

export function renderCitationCards(cards: readonly CitationCard[]): string[] {
  return cards.map((card) => {
    const where = card.span === "" ? card.docId : `${card.docId} @${card.span}`;
    return card.text === null ? `[${where}] (text not in trace)` : `[${where}] ${card.text}`;
  });
}

export function renderMeasurementOverlayText(model: OverlayModel): string[] {
  const lines: string[] = [];
  if (model.placeholder) {
    lines.push(`schematic placeholder ${model.width}x${model.height}`);
  } else {
    lines.push(`study ${model.studyId} frame ${model.frame} (${model.width}x${model.height})`);
  }
  if (model.calipers.length === 0) {
    lines.push("(no measurements; frame shown unannotated)");
    return lines;
  }
  for (const caliper of model.calipers) {
    lines.push(
      `caliper ${caliper.label}  (${caliper.from[0].toFixed(1)},${caliper.from[1].toFixed(1)})` +
        ` -> (${caliper.to[0].toFixed(1)},${caliper.to[1].toFixed(1)})`,
    );
  }
  if (model.legend.length > 0) {
    lines.push(`legend: ${model.legend.join(" | ")}`);
  }
  return lines;
}

export interface ReviewerGold {
  text: string;
  verdict: "correct" | "incorrect" | "unjudged";
}

/** Reviewer mode: gold answer and console answer side by side. */
export function renderReviewerPanel(vm: SessionViewModel, gold: ReviewerGold): string[] {
  const left = ["gold answer", "-----------", ...wrap(gold.text)];
  const right = ["session answer", "--------------", ...wrap(vm.answer?.text ?? "(no answer yet)")];
  const width = Math.max(...left.map((l) => l.length)) + 4;
  const rows = Math.max(left.length, right.length);
  const lines: string[] = [];
  for (let i = 0; i < rows; i++) {
    lines.push((left[i] ?? "").padEnd(width) + (right[i] ?? ""));
  }
  lines.push(`verdict: ${gold.verdict}`);
  return lines;
}

function wrap(text: string, width = 48): string[] {
  const words = text.split(/\s+/).filter((w) => w.length > 0);
  const lines: string[] = [];
  let line = "";
  for (const word of words) {
    if (line.length > 0 && line.length + word.length + 1 > width) {
      lines.push(line);
      line = word;
    } else {
      line = line.length === 0 ? word : `${line} ${word}`;
    }
  }
  if (line.length > 0) {
    lines.push(line);
  }
  return lines.length === 0 ? [""] : lines;
}
