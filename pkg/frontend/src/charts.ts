/**
 * Dependency-free SVG time-series rendering: one polyline per signal, a
 * dashed threshold line, and shaded spans over breached ticks. Pure
 * string-producing functions so they test in node and render anywhere.
 */

export interface ChartSpec {
  ticks: number[];
  values: (number | null)[];
  breachTicks: Set<number>;
  threshold?: number;
  direction?: "upper" | "lower";
  width: number;
  height: number;
  pad?: number;
}

export interface Scale {
  x: (tick: number) => number;
  y: (value: number) => number;
  yMin: number;
  yMax: number;
}

export function makeScale(spec: ChartSpec): Scale {
  const pad = spec.pad ?? 6;
  const finite = spec.values.filter((v): v is number => v !== null);
  let lo = Math.min(...(finite.length ? finite : [0]));
  let hi = Math.max(...(finite.length ? finite : [1]));
  if (spec.threshold !== undefined) {
    lo = Math.min(lo, spec.threshold);
    hi = Math.max(hi, spec.threshold);
  }
  if (hi - lo < 1e-9) {
    hi = lo + 1;
  }
  const span = hi - lo;
  lo -= span * 0.08;
  hi += span * 0.08;
  const t0 = spec.ticks.length ? spec.ticks[0]! : 0;
  const t1 = spec.ticks.length ? spec.ticks[spec.ticks.length - 1]! : 1;
  const dt = Math.max(t1 - t0, 1);
  return {
    x: (tick) => pad + ((tick - t0) / dt) * (spec.width - 2 * pad),
    y: (value) => spec.height - pad - ((value - lo) / (hi - lo)) * (spec.height - 2 * pad),
    yMin: lo,
    yMax: hi,
  };
}

/** SVG path ("M x y L x y ...") skipping null gaps. */
export function linePath(spec: ChartSpec, scale = makeScale(spec)): string {
  const parts: string[] = [];
  let pen = false;
  for (let i = 0; i < spec.ticks.length; i++) {
    const v = spec.values[i];
    if (v === null || v === undefined) {
      pen = false;
      continue;
    }
    const x = scale.x(spec.ticks[i]!).toFixed(2);
    const y = scale.y(v).toFixed(2);
    parts.push(`${pen ? "L" : "M"}${x} ${y}`);
    pen = true;
  }
  return parts.join(" ");
}

/** Contiguous breached tick ranges -> shaded rect coordinates. */
export function breachSpans(spec: ChartSpec, scale = makeScale(spec)):
    Array<{ x: number; width: number }> {
  const sorted = [...spec.breachTicks].sort((a, b) => a - b);
  const spans: Array<{ start: number; end: number }> = [];
  for (const t of sorted) {
    const last = spans[spans.length - 1];
    if (last && t <= last.end + 1) last.end = t;
    else spans.push({ start: t, end: t });
  }
  return spans.map((s) => {
    const x0 = scale.x(s.start);
    const x1 = scale.x(s.end + 1);
    return { x: +x0.toFixed(2), width: +Math.max(x1 - x0, 1).toFixed(2) };
  });
}

export function chartSvg(name: string, spec: ChartSpec): string {
  const scale = makeScale(spec);
  const spans = breachSpans(spec, scale)
    .map((s) => `<rect class="breach" x="${s.x}" y="0" width="${s.width}" ` +
                `height="${spec.height}"></rect>`)
    .join("");
  let threshold = "";
  if (spec.threshold !== undefined) {
    const ty = scale.y(spec.threshold).toFixed(2);
    threshold = `<line class="threshold" x1="0" x2="${spec.width}" ` +
      `y1="${ty}" y2="${ty}" stroke-dasharray="4 3"></line>`;
  }
  const last = [...spec.values].reverse().find((v) => v !== null);
  const label = last === undefined || last === null ? "–" : formatValue(last);
  return `<svg viewBox="0 0 ${spec.width} ${spec.height}" ` +
    `preserveAspectRatio="none" data-signal="${name}">` +
    `${spans}${threshold}` +
    `<path class="series" d="${linePath(spec, scale)}" fill="none"></path>` +
    `<text class="value" x="${spec.width - 4}" y="12" text-anchor="end">${label}</text>` +
    `</svg>`;
}

export function formatValue(v: number): string {
  if (!Number.isFinite(v)) return "–";
  const magnitude = Math.abs(v);
  if (magnitude >= 100) return v.toFixed(1);
  if (magnitude >= 1) return v.toFixed(2);
  return v.toFixed(4);
}
