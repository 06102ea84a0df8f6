//! Event-density accumulation grids and bilinear splatting/sampling.
//!
//! A density map covers the square support of integer offsets in
//! `[-N, N]²`, stored row-major. Each event contributes unit mass split over
//! the four pixels surrounding its real-valued position; contributions
//! falling outside the support are dropped.

use crate::mat::Vec2;

/// Floor an event position to its base pixel and compute the four bilinear
/// weights over the neighborhood `{n, n+v1, n+v2, n+v1+v2}` (v1 = +x,
/// v2 = +y). Weights are non-negative and sum to exactly 1.
#[inline]
pub fn bilinear_weights(x: Vec2) -> ([i64; 2], [f64; 4]) {
    let fx = x[0].floor();
    let fy = x[1].floor();
    let dx = x[0] - fx;
    let dy = x[1] - fy;
    let weights = [
        (1.0 - dx) * (1.0 - dy),
        dx * (1.0 - dy),
        (1.0 - dx) * dy,
        dx * dy,
    ];
    ([fx as i64, fy as i64], weights)
}

/// Pixel offsets of the four-point neighborhood relative to the base pixel,
/// in the same order as the weights returned by [`bilinear_weights`].
pub const NEIGHBORHOOD: [[i64; 2]; 4] = [[0, 0], [1, 0], [0, 1], [1, 1]];

/// In-bounds pixels touched by one splat, at most four.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplatFootprint {
    pixels: [[i32; 2]; 4],
    count: usize,
}

impl SplatFootprint {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn pixels(&self) -> &[[i32; 2]] {
        &self.pixels[..self.count]
    }

    fn push(&mut self, px: [i32; 2]) {
        self.pixels[self.count] = px;
        self.count += 1;
    }
}

/// Square accumulation grid over integer offsets `[-N, N]²`. All entries are
/// non-negative; total mass equals splatted events minus border-clipped
/// contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    radius: i32,
    side: usize,
    values: Vec<f64>,
}

impl DensityMap {
    pub fn new(radius: i32) -> Self {
        assert!(radius >= 1, "density map radius must be at least 1");
        let side = (2 * radius + 1) as usize;
        Self {
            radius,
            side,
            values: vec![0.0; side * side],
        }
    }

    #[inline]
    pub fn radius(&self) -> i32 {
        self.radius
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn in_bounds(&self, px: [i32; 2]) -> bool {
        px[0].abs() <= self.radius && px[1].abs() <= self.radius
    }

    /// Row-major index of an in-bounds pixel offset.
    #[inline]
    pub fn index_of(&self, px: [i32; 2]) -> usize {
        debug_assert!(self.in_bounds(px));
        (px[1] + self.radius) as usize * self.side + (px[0] + self.radius) as usize
    }

    /// Pixel offset for a row-major index.
    #[inline]
    pub fn offset_of(&self, index: usize) -> [i32; 2] {
        let x = (index % self.side) as i32 - self.radius;
        let y = (index / self.side) as i32 - self.radius;
        [x, y]
    }

    /// Stored value at a pixel offset; zero outside the support.
    #[inline]
    pub fn value(&self, px: [i32; 2]) -> f64 {
        if self.in_bounds(px) {
            self.values[self.index_of(px)]
        } else {
            0.0
        }
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Add one event's unit mass at position `x` (map frame). Contributions
    /// outside the support are dropped; returns the in-bounds pixels touched.
    pub fn splat(&mut self, x: Vec2) -> SplatFootprint {
        let (base, weights) = bilinear_weights(x);
        let mut footprint = SplatFootprint::default();
        for (offset, w) in NEIGHBORHOOD.iter().zip(weights) {
            let px_l = [base[0] + offset[0], base[1] + offset[1]];
            if px_l[0].abs() > self.radius as i64 || px_l[1].abs() > self.radius as i64 {
                continue;
            }
            let px = [px_l[0] as i32, px_l[1] as i32];
            let idx = self.index_of(px);
            self.values[idx] += w;
            footprint.push(px);
        }
        footprint
    }

    /// Bilinear interpolation of the stored densities at a real-valued map
    /// position; reads outside the support contribute zero.
    pub fn sample(&self, x: Vec2) -> f64 {
        let (base, weights) = bilinear_weights(x);
        let mut acc = 0.0;
        for (offset, w) in NEIGHBORHOOD.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let px_l = [base[0] + offset[0], base[1] + offset[1]];
            if px_l[0].abs() > self.radius as i64 || px_l[1].abs() > self.radius as i64 {
                continue;
            }
            acc += w * self.values[self.index_of([px_l[0] as i32, px_l[1] as i32])];
        }
        acc
    }

    /// Central-difference gradient of the whole map, replicate-edge at the
    /// borders.
    pub fn gradient(&self) -> GradientField {
        let mut field = GradientField::zeros(self.radius);
        for y in -self.radius..=self.radius {
            for x in -self.radius..=self.radius {
                field.refresh_at(self, [x, y]);
            }
        }
        field
    }
}

/// Per-pixel template gradients, maintained alongside the template map. The
/// two components share the layout of the source [`DensityMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    radius: i32,
    side: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(radius: i32) -> Self {
        let side = (2 * radius + 1) as usize;
        Self {
            radius,
            side,
            gx: vec![0.0; side * side],
            gy: vec![0.0; side * side],
        }
    }

    #[inline]
    pub fn radius(&self) -> i32 {
        self.radius
    }

    #[inline]
    fn index_of(&self, px: [i32; 2]) -> usize {
        (px[1] + self.radius) as usize * self.side + (px[0] + self.radius) as usize
    }

    #[inline]
    pub fn in_bounds(&self, px: [i32; 2]) -> bool {
        px[0].abs() <= self.radius && px[1].abs() <= self.radius
    }

    pub fn gx_values(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy_values(&self) -> &[f64] {
        &self.gy
    }

    pub fn gx_at(&self, px: [i32; 2]) -> f64 {
        if self.in_bounds(px) {
            self.gx[self.index_of(px)]
        } else {
            0.0
        }
    }

    pub fn gy_at(&self, px: [i32; 2]) -> f64 {
        if self.in_bounds(px) {
            self.gy[self.index_of(px)]
        } else {
            0.0
        }
    }

    /// Recompute both gradient components at one pixel from the map.
    pub fn refresh_at(&mut self, map: &DensityMap, px: [i32; 2]) {
        debug_assert!(self.in_bounds(px));
        let r = self.radius;
        let clamp = |v: i32| v.clamp(-r, r);
        let idx = self.index_of(px);
        self.gx[idx] =
            (map.value([clamp(px[0] + 1), px[1]]) - map.value([clamp(px[0] - 1), px[1]])) / 2.0;
        self.gy[idx] =
            (map.value([px[0], clamp(px[1] + 1)]) - map.value([px[0], clamp(px[1] - 1)])) / 2.0;
    }

    /// Visit every gradient pixel whose value depends on the density at
    /// `changed`: the inverse of the central-difference stencil, accounting
    /// for the replicate-edge rows/columns. May visit a pixel twice; callers
    /// deduplicate.
    pub fn visit_dependents(&self, changed: [i32; 2], mut visit: impl FnMut([i32; 2])) {
        let r = self.radius;
        let clamp = |v: i32| v.clamp(-r, r);
        for d in [-1i32, 0, 1] {
            // x-component at q reads columns clamp(q.x - 1) and clamp(q.x + 1).
            let qx = [changed[0] + d, changed[1]];
            if self.in_bounds(qx)
                && (clamp(qx[0] - 1) == changed[0] || clamp(qx[0] + 1) == changed[0])
            {
                visit(qx);
            }
            // y-component at q reads rows clamp(q.y - 1) and clamp(q.y + 1).
            let qy = [changed[0], changed[1] + d];
            if self.in_bounds(qy)
                && (clamp(qy[1] - 1) == changed[1] || clamp(qy[1] + 1) == changed[1])
            {
                visit(qy);
            }
        }
    }

    /// Deduplicated list form of [`Self::visit_dependents`].
    pub fn dependents_of(&self, changed: [i32; 2], out: &mut Vec<[i32; 2]>) {
        self.visit_dependents(changed, |q| {
            if !out.contains(&q) {
                out.push(q);
            }
        });
    }

    /// Bilinear sample of both components at a real-valued position; reads
    /// outside the support contribute zero.
    pub fn sample(&self, x: Vec2) -> (f64, f64) {
        let (base, weights) = bilinear_weights(x);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (offset, w) in NEIGHBORHOOD.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let px_l = [base[0] + offset[0], base[1] + offset[1]];
            if px_l[0].abs() > self.radius as i64 || px_l[1].abs() > self.radius as i64 {
                continue;
            }
            let idx = self.index_of([px_l[0] as i32, px_l[1] as i32]);
            gx += w * self.gx[idx];
            gy += w * self.gy[idx];
        }
        (gx, gy)
    }
}
