//! Symmetric Gauss rules on triangles and the 2-point rule on edges.

/// Barycentric points and weights (weights sum to 1).
#[derive(Clone, Copy, Debug)]
pub struct TriangleRule {
    pub points: &'static [[f64; 3]],
    pub weights: &'static [f64],
}

const CENTROID: [[f64; 3]; 1] = [[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
const CENTROID_W: [f64; 1] = [1.0];

const THREE: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];
const THREE_W: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

// Dunavant degree-4 rule.
const A4: f64 = 0.445_948_490_915_965;
const B4: f64 = 0.091_576_213_509_771;
const W4A: f64 = 0.223_381_589_678_011;
const W4B: f64 = 0.109_951_743_655_322;
const SIX: [[f64; 3]; 6] = [
    [A4, A4, 1.0 - 2.0 * A4],
    [A4, 1.0 - 2.0 * A4, A4],
    [1.0 - 2.0 * A4, A4, A4],
    [B4, B4, 1.0 - 2.0 * B4],
    [B4, 1.0 - 2.0 * B4, B4],
    [1.0 - 2.0 * B4, B4, B4],
];
const SIX_W: [f64; 6] = [W4A, W4A, W4A, W4B, W4B, W4B];

/// Quadrature order 1..=4. Order 1 is the centroid rule, order 2 the
/// 3-point rule; orders 3 and 4 share the 6-point degree-4 rule.
pub fn triangle_rule(order: u8) -> TriangleRule {
    match order {
        0 | 1 => TriangleRule {
            points: &CENTROID,
            weights: &CENTROID_W,
        },
        2 => TriangleRule {
            points: &THREE,
            weights: &THREE_W,
        },
        _ => TriangleRule {
            points: &SIX,
            weights: &SIX_W,
        },
    }
}

/// Default order for oscillatory integrands.
pub const DEFAULT_ORDER: u8 = 2;

/// 2-point Gauss on `[0,1]`: `(t, weight)`.
pub const EDGE_GAUSS: [(f64, f64); 2] = [
    (0.5 - 0.288_675_134_594_812_9, 0.5),
    (0.5 + 0.288_675_134_594_812_9, 0.5),
];

pub fn map_point(c: [[f64; 2]; 3], l: [f64; 3]) -> [f64; 2] {
    [
        l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
        l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
    ]
}
