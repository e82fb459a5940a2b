/**
 * Caliper overlays: turn measure results and an optional frame payload
 * into a drawable annotation model.
 */
import { measurementWireSchema, type FrameWire, type MeasurementWire } from "./events.js";
import type { SessionViewModel } from "./timeline.js";

/** Size of the schematic canvas used when no pixel payload is available. */
export const PLACEHOLDER_SIZE = 112;

export interface Caliper {
  kind: string;
  frame: number;
  valueCm: number;
  label: string;
  from: [number, number];
  to: [number, number];
}

export interface OverlayModel {
  studyId: string | null;
  frame: number | null;
  width: number;
  height: number;
  /** True when the calipers sit on placeholder geometry, not real pixels. */
  placeholder: boolean;
  pixels: Uint8Array | null;
  calipers: Caliper[];
  legend: string[];
}

/** "IVS 1.0 cm": trim trailing float noise but keep at least one decimal. */
export function formatCaliperLabel(kind: string, valueCm: number): string {
  const rounded = Math.round(valueCm * 100) / 100;
  const text = Number.isInteger(rounded) ? rounded.toFixed(1) : String(rounded);
  return `${kind} ${text} cm`;
}

function toCaliper(measurement: MeasurementWire): Caliper {
  const [from, to] = measurement.endpoints_px;
  return {
    kind: measurement.kind,
    frame: measurement.frame,
    valueCm: measurement.value_cm,
    label: formatCaliperLabel(measurement.kind, measurement.value_cm),
    from: [from[0], from[1]],
    to: [to[0], to[1]],
  };
}

export function decodePixels(frame: FrameWire): Uint8Array {
  if (typeof atob === "function") {
    const binary = atob(frame.pixels);
    const out = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) {
      out[i] = binary.charCodeAt(i);
    }
    return out;
  }
  return new Uint8Array(Buffer.from(frame.pixels, "base64"));
}

/**
 * Build the annotation model for one frame view.
 *
 * With a frame payload the calipers are drawn over its pixels; without one
 * the same calipers are laid out on a schematic placeholder so the
 * measurement geometry stays inspectable. No measurements means the frame
 * is shown unannotated.
 */
export function renderMeasurementOverlay(
  frame: FrameWire | null,
  measurements: readonly MeasurementWire[],
): OverlayModel {
  const calipers = measurements.map(toCaliper);
  const legend = calipers.length >= 2 ? calipers.map((c) => c.label) : [];
  if (frame === null) {
    return {
      studyId: null,
      frame: null,
      width: PLACEHOLDER_SIZE,
      height: PLACEHOLDER_SIZE,
      placeholder: true,
      pixels: null,
      calipers,
      legend,
    };
  }
  return {
    studyId: frame.study_id,
    frame: frame.frame,
    width: frame.width,
    height: frame.height,
    placeholder: false,
    pixels: decodePixels(frame),
    calipers,
    legend,
  };
}

/**
 * Collect every successful measure result observed in a session, in step
 * order. Cards are the only source: the overlay never shows a number that
 * did not arrive as a tool result.
 */
export function collectMeasurements(vm: SessionViewModel): MeasurementWire[] {
  const out: MeasurementWire[] = [];
  for (const card of vm.steps) {
    if (card.toolName !== "measure" || card.ok !== true) {
      continue;
    }
    const parsed = measurementWireSchema.safeParse(card.resultPayload);
    if (parsed.success) {
      out.push(parsed.data);
    }
  }
  return out;
}
