import { describe, expect, it } from "vitest";

import { frameWireSchema, measurementWireSchema, type MeasurementWire } from "../src/events.js";
import {
  collectMeasurements,
  decodePixels,
  formatCaliperLabel,
  PLACEHOLDER_SIZE,
  renderMeasurementOverlay,
} from "../src/overlay.js";
import { reduceTimeline } from "../src/timeline.js";
import { loadFixture, loadSession } from "./helpers.js";

const frame = frameWireSchema.parse(loadFixture("frame-30.json"));

const ivs: MeasurementWire = {
  kind: "IVS",
  frame: 0,
  value_cm: 1.0,
  endpoints_px: [
    [30.0, 40.0],
    [51.7, 40.0],
  ],
};

const lvid: MeasurementWire = {
  kind: "LVID",
  frame: 0,
  value_cm: 4.6,
  endpoints_px: [
    [30.0, 46.0],
    [130.0, 46.0],
  ],
};

describe("caliper labels", () => {
  it("formats whole centimetre values with one decimal", () => {
    expect(formatCaliperLabel("IVS", 1.0)).toBe("IVS 1.0 cm");
  });

  it("keeps two meaningful decimals", () => {
    expect(formatCaliperLabel("LVID", 4.6)).toBe("LVID 4.6 cm");
    expect(formatCaliperLabel("LVPW", 1.25)).toBe("LVPW 1.25 cm");
    expect(formatCaliperLabel("LA", 3.456789)).toBe("LA 3.46 cm");
  });
});

describe("measurement overlay", () => {
  it("draws one caliper with its label over the frame", () => {
    const model = renderMeasurementOverlay(frame, [ivs]);
    expect(model.placeholder).toBe(false);
    expect(model.calipers.length).toBe(1);
    expect(model.calipers[0].label).toBe("IVS 1.0 cm");
    expect(model.calipers[0].from).toEqual([30.0, 40.0]);
    expect(model.calipers[0].to).toEqual([51.7, 40.0]);
    expect(model.legend).toEqual([]);
    expect(model.pixels?.length).toBe(frame.width * frame.height);
  });

  it("layers two measurements and adds a legend", () => {
    const model = renderMeasurementOverlay(frame, [ivs, lvid]);
    expect(model.calipers.length).toBe(2);
    expect(model.legend).toEqual(["IVS 1.0 cm", "LVID 4.6 cm"]);
  });

  it("falls back to schematic placeholder geometry without pixels", () => {
    const model = renderMeasurementOverlay(null, [ivs]);
    expect(model.placeholder).toBe(true);
    expect(model.pixels).toBeNull();
    expect(model.width).toBe(PLACEHOLDER_SIZE);
    expect(model.height).toBe(PLACEHOLDER_SIZE);
    expect(model.calipers.length).toBe(1);
  });

  it("shows the frame unannotated when there are no measurements", () => {
    const model = renderMeasurementOverlay(frame, []);
    expect(model.placeholder).toBe(false);
    expect(model.calipers).toEqual([]);
    expect(model.legend).toEqual([]);
  });

  it("decodes the recorded pixel payload to the advertised size", () => {
    const pixels = decodePixels(frame);
    expect(pixels.length).toBe(112 * 112);
    expect(Math.max(...pixels)).toBeGreaterThan(0);
    expect(Math.max(...pixels)).toBeLessThanOrEqual(255);
  });
});

describe("measurements from a session", () => {
  it("collects exactly the successful measure payloads", () => {
    const recorded = loadSession("four-step-session.json");
    const vm = reduceTimeline(recorded.summary.session_id, recorded.events);
    const measurements = collectMeasurements(vm);
    expect(measurements.length).toBe(1);
    expect(measurements[0].kind).toBe("IVS");
    expect(measurementWireSchema.parse(measurements[0]).value_cm).toBeCloseTo(1.0, 9);
  });

  it("finds nothing in a session that never measured", () => {
    const recorded = loadSession("exhausted-session.json");
    const vm = reduceTimeline(recorded.summary.session_id, recorded.events);
    expect(collectMeasurements(vm)).toEqual([]);
  });
});
