// Planar-chain forward kinematics for the 3-link arm.

export interface Point {
  x: number;
  y: number;
}

/**
 * Joint positions for cumulative-angle links: p_k = p_{k-1} + L_k * (cos S_k, sin S_k)
 * with S_k the sum of the first k joint angles. Returns base..end-effector
 * (linkLengths.length + 1 points).
 */
export function chainPositions(angles: number[], linkLengths: number[]): Point[] {
  if (angles.length !== linkLengths.length) {
    throw new Error(
      `angles (${angles.length}) and links (${linkLengths.length}) differ`);
  }
  const pts: Point[] = [{ x: 0, y: 0 }];
  let total = 0;
  for (let k = 0; k < angles.length; k++) {
    total += angles[k];
    const prev = pts[k];
    pts.push({
      x: prev.x + linkLengths[k] * Math.cos(total),
      y: prev.y + linkLengths[k] * Math.sin(total),
    });
  }
  return pts;
}

export function endEffector(angles: number[], linkLengths: number[]): Point {
  const pts = chainPositions(angles, linkLengths);
  return pts[pts.length - 1];
}
