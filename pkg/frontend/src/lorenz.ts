/** SVG path helpers for the Lorenz curve panel.
 *
 * Points come from the service verbatim ([population fraction,
 * cumulative share] pairs from (0,0) to (1,1)); this module only maps
 * them into pixel space.
 */

export function toPixels(
  points: [number, number][],
  width: number,
  height: number,
): [number, number][] {
  return points.map(([x, y]) => [x * width, (1 - y) * height]);
}

/** Polyline path for the curve itself. */
export function lorenzPath(
  points: [number, number][],
  width: number,
  height: number,
): string {
  if (points.length === 0) return "";
  return toPixels(points, width, height)
    .map(([px, py], i) => `${i === 0 ? "M" : "L"}${round2(px)} ${round2(py)}`)
    .join(" ");
}

/** The 45-degree equality reference line. */
export function equalityPath(width: number, height: number): string {
  return `M0 ${height} L${width} 0`;
}

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}
