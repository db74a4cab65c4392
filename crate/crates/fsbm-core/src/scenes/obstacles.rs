//! Analytic obstacle shapes for the crowd-navigation scenes, with exact
//! penetration depths (for costs and validation) and signed-distance margin
//! penalties (for trajectory synthesis).

use serde::{Deserialize, Serialize};

use crate::paths::StateCost;

/// Penalty weight on squared penetration depth.
pub const OBSTACLE_WEIGHT: f64 = 1500.0;

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A planar obstacle with an exact Euclidean penetration depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Obstacle {
    /// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
    Slab {
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },
    /// Two symmetric wedges `±y ≥ offset + slope·|x|`, forming a neck of
    /// half-width `offset` at the origin.
    WedgePair { offset: f64, slope: f64 },
}

impl Obstacle {
    /// Euclidean distance from `p` to the obstacle boundary when `p` lies
    /// inside the obstacle; 0 on the boundary or outside.
    pub fn penetration_depth(&self, px: f64, py: f64) -> f64 {
        match *self {
            Obstacle::Slab {
                xmin,
                xmax,
                ymin,
                ymax,
            } => {
                let dx = (px - xmin).min(xmax - px);
                let dy = (py - ymin).min(ymax - py);
                if dx > 0.0 && dy > 0.0 {
                    dx.min(dy)
                } else {
                    0.0
                }
            }
            Obstacle::WedgePair { offset, slope } => {
                let r = (1.0 + slope * slope).sqrt();
                let mut depth = 0.0;
                for sign in [1.0, -1.0] {
                    let y = sign * py;
                    let d1 = (y - offset - slope * px) / r;
                    let d2 = (y - offset + slope * px) / r;
                    depth += d1.min(d2).max(0.0);
                }
                depth
            }
        }
    }

    /// Signed distance to the obstacle boundary (positive outside, negative
    /// inside) and its gradient. For the wedge pair the distance is taken to
    /// the nearer wedge's face lines, a conservative bound near the apex.
    fn signed_distance_grad(&self, px: f64, py: f64) -> (f64, f64, f64) {
        match *self {
            Obstacle::Slab {
                xmin,
                xmax,
                ymin,
                ymax,
            } => {
                let (cx, cy) = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax));
                let (hx, hy) = (0.5 * (xmax - xmin), 0.5 * (ymax - ymin));
                let qx = (px - cx).abs() - hx;
                let qy = (py - cy).abs() - hy;
                let ox = qx.max(0.0);
                let oy = qy.max(0.0);
                let outer = (ox * ox + oy * oy).sqrt();
                let inner = qx.max(qy).min(0.0);
                let sd = outer + inner;
                if outer > 0.0 {
                    (
                        sd,
                        ox / outer * sign0(px - cx),
                        oy / outer * sign0(py - cy),
                    )
                } else if qx >= qy {
                    (sd, sign0(px - cx), 0.0)
                } else {
                    (sd, 0.0, sign0(py - cy))
                }
            }
            Obstacle::WedgePair { offset, slope } => {
                // Nearest wedge is on the side of sign(py); distance to the
                // nearer of its two face lines.
                let r = (1.0 + slope * slope).sqrt();
                let sign = if py >= 0.0 { 1.0 } else { -1.0 };
                let sd = (offset + slope * px.abs() - sign * py) / r;
                (sd, slope * sign0(px) / r, -sign / r)
            }
        }
    }
}

/// Hard penalty `weight · Σ depth²` with exact penetration depths.
pub fn penetration_cost(obstacles: &[Obstacle], px: f64, py: f64) -> f64 {
    obstacles
        .iter()
        .map(|o| {
            let d = o.penetration_depth(px, py);
            OBSTACLE_WEIGHT * d * d
        })
        .sum()
}

/// Soft clearance penalty `weight · Σ max(margin − sd, 0)²` on the signed
/// distance to each obstacle. With `margin = 0` this equals the exact
/// penetration penalty; a positive margin also pushes on points *outside*
/// the obstacle, which keeps synthesized trajectories from hugging (or
/// clipping) corners.
#[derive(Debug, Clone)]
pub struct ObstacleMarginCost {
    obstacles: Vec<Obstacle>,
    weight: f64,
    margin: f64,
}

impl ObstacleMarginCost {
    pub fn new(obstacles: Vec<Obstacle>, margin: f64) -> Self {
        ObstacleMarginCost {
            obstacles,
            weight: OBSTACLE_WEIGHT,
            margin,
        }
    }
}

impl StateCost for ObstacleMarginCost {
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (px, py) = (x[0], x[1]);
        let mut total = 0.0;
        for obs in &self.obstacles {
            let (sd, gx, gy) = obs.signed_distance_grad(px, py);
            let pen = (self.margin - sd).max(0.0);
            if pen > 0.0 {
                total += self.weight * pen * pen;
                grad[0] += -2.0 * self.weight * pen * gx;
                grad[1] += -2.0 * self.weight * pen * gy;
            }
        }
        total
    }

    fn curvature(&self) -> f64 {
        2.0 * self.weight
    }
}
