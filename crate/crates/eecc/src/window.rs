//! The model window: the instantaneous density map built from the raw events
//! currently buffered, anchored at the integer-rounded feature center.

use thiserror::Error;

use crate::density::{bilinear_weights, NEIGHBORHOOD};
use crate::event::EventBuffer;
use crate::warp::FeatureState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("model window received no in-bounds event mass")]
pub struct DegenerateModel;

/// Vectorized model window over integer offsets `[-N, N]²` relative to
/// `round(center)`, with the list of active (non-zero) pixels and its mass
/// and Euclidean norm.
#[derive(Debug, Clone)]
pub struct ModelWindow {
    radius: i32,
    side: usize,
    center: [i32; 2],
    values: Vec<f64>,
    active: Vec<u32>,
    mass: f64,
    norm: f64,
}

impl ModelWindow {
    /// Build from every buffered event, splatted at its offset from the
    /// rounded feature center. Fails if no contribution lands in bounds.
    pub fn build(
        buffer: &EventBuffer,
        state: &FeatureState,
        radius: i32,
    ) -> Result<Self, DegenerateModel> {
        let side = (2 * radius + 1) as usize;
        let mut window = Self {
            radius,
            side,
            center: [0, 0],
            values: vec![0.0; side * side],
            active: Vec::with_capacity(buffer.capacity() * 4),
            mass: 0.0,
            norm: 0.0,
        };
        window.rebuild(buffer, state)?;
        Ok(window)
    }

    /// Construct directly from raw values; intended for solver tests and
    /// benchmarks that need a window without an event stream.
    pub fn from_values(radius: i32, center: [i32; 2], values: Vec<f64>) -> Self {
        let side = (2 * radius + 1) as usize;
        assert_eq!(values.len(), side * side);
        let active: Vec<u32> = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i as u32)
            .collect();
        let mass = values.iter().sum();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self { radius, side, center, values, active, mass, norm }
    }

    /// Clear and re-splat from the current buffer contents, re-anchoring at
    /// the state's rounded center.
    pub fn rebuild(
        &mut self,
        buffer: &EventBuffer,
        state: &FeatureState,
    ) -> Result<(), DegenerateModel> {
        self.rebuild_at(buffer, state.rounded_center())
    }

    /// Clear and re-splat from the current buffer contents, keeping the given
    /// anchor. Only previously active pixels are cleared, keeping the
    /// per-event cost proportional to the buffer size.
    pub fn rebuild_at(
        &mut self,
        buffer: &EventBuffer,
        center: [i32; 2],
    ) -> Result<(), DegenerateModel> {
        for &idx in &self.active {
            self.values[idx as usize] = 0.0;
        }
        self.active.clear();
        self.center = center;
        let cx = self.center[0] as f64;
        let cy = self.center[1] as f64;
        let radius = self.radius as i64;

        let mut mass = 0.0;
        for event in buffer.iter() {
            let (base, weights) = bilinear_weights([event.x - cx, event.y - cy]);
            if base[0] >= -radius && base[0] + 1 <= radius && base[1] >= -radius && base[1] + 1 <= radius
            {
                // Interior fast path: the whole footprint is in bounds, so
                // the four indices are within the value grid by construction.
                let i00 = (base[1] + radius) as usize * self.side + (base[0] + radius) as usize;
                let i01 = i00 + self.side;
                let values = &mut self.values;
                let active = &mut self.active;
                let mut deposit = |idx: usize, w: f64| {
                    // SAFETY: idx <= (2N)(2N+1) + 2N < (2N+1)^2 = values.len().
                    let v = unsafe { values.get_unchecked_mut(idx) };
                    if *v == 0.0 && w > 0.0 {
                        active.push(idx as u32);
                    }
                    *v += w;
                };
                deposit(i00, weights[0]);
                deposit(i00 + 1, weights[1]);
                deposit(i01, weights[2]);
                deposit(i01 + 1, weights[3]);
                mass += 1.0;
                continue;
            }
            for (offset, w) in NEIGHBORHOOD.iter().zip(weights) {
                let px = [base[0] + offset[0], base[1] + offset[1]];
                if px[0].abs() > radius || px[1].abs() > radius {
                    continue;
                }
                let idx = (px[1] + radius) as usize * self.side + (px[0] + radius) as usize;
                if self.values[idx] == 0.0 && w > 0.0 {
                    self.active.push(idx as u32);
                }
                self.values[idx] += w;
                mass += w;
            }
        }
        if self.active.is_empty() {
            self.mass = 0.0;
            self.norm = 0.0;
            return Err(DegenerateModel);
        }
        self.mass = mass;
        self.norm = self
            .active
            .iter()
            .map(|&i| {
                let v = self.values[i as usize];
                v * v
            })
            .sum::<f64>()
            .sqrt();
        Ok(())
    }

    #[inline]
    pub fn radius(&self) -> i32 {
        self.radius
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Integer window anchor (`round(center)` at build time).
    #[inline]
    pub fn center(&self) -> [i32; 2] {
        self.center
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices of pixels holding non-zero density.
    pub fn active(&self) -> &[u32] {
        &self.active
    }

    #[inline]
    pub fn is_active(&self, index: usize) -> bool {
        self.values[index] > 0.0
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// Value at an integer offset from the window anchor; zero outside.
    pub fn value_at(&self, px: [i32; 2]) -> f64 {
        if px[0].abs() > self.radius || px[1].abs() > self.radius {
            return 0.0;
        }
        self.values[(px[1] + self.radius) as usize * self.side + (px[0] + self.radius) as usize]
    }

    /// Global pixel position of a row index.
    #[inline]
    pub fn global_of(&self, index: usize) -> [f64; 2] {
        let x = (index % self.side) as i32 - self.radius + self.center[0];
        let y = (index / self.side) as i32 - self.radius + self.center[1];
        [x as f64, y as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;

    fn full_buffer_of(positions: &[(f64, f64)]) -> EventBuffer {
        let mut buf = EventBuffer::with_capacity(positions.len());
        for (i, &(x, y)) in positions.iter().enumerate() {
            buf.push(Event::new(i as i64, x, y, 1)).unwrap();
        }
        buf
    }

    #[test]
    fn stack_of_identical_events_is_a_single_pixel() {
        let positions: Vec<(f64, f64)> = (0..193).map(|_| (50.0, 40.0)).collect();
        let buf = full_buffer_of(&positions);
        let state = FeatureState::seed(50.0, 40.0);
        let window = ModelWindow::build(&buf, &state, 15).unwrap();
        assert_eq!(window.value_at([0, 0]), 193.0);
        assert_eq!(window.active().len(), 1);
        assert!((window.mass() - 193.0).abs() < 1e-9);
    }

    #[test]
    fn vertical_line_fills_a_single_column() {
        let positions: Vec<(f64, f64)> = (0..31).map(|i| (50.0, 30.0 + i as f64)).collect();
        let buf = full_buffer_of(&positions);
        let state = FeatureState::seed(50.0, 45.0);
        let window = ModelWindow::build(&buf, &state, 15).unwrap();
        for y in -15..=15 {
            assert!(window.value_at([0, y]) > 0.0);
            for x in 1..=15 {
                assert_eq!(window.value_at([x, y]), 0.0);
                assert_eq!(window.value_at([-x, y]), 0.0);
            }
        }
    }

    #[test]
    fn interior_events_conserve_buffer_mass() {
        let positions: Vec<(f64, f64)> = (0..193)
            .map(|i| (50.0 + (i % 9) as f64 - 4.0, 40.0 + (i % 7) as f64 - 3.0))
            .collect();
        let buf = full_buffer_of(&positions);
        let state = FeatureState::seed(50.0, 40.0);
        let window = ModelWindow::build(&buf, &state, 15).unwrap();
        assert!((window.mass() - 193.0).abs() < 1e-9);
    }

    #[test]
    fn all_events_out_of_bounds_is_degenerate() {
        let positions: Vec<(f64, f64)> = (0..5).map(|_| (200.0, 200.0)).collect();
        let buf = full_buffer_of(&positions);
        let state = FeatureState::seed(50.0, 40.0);
        assert!(ModelWindow::build(&buf, &state, 15).is_err());
    }

    #[test]
    fn rebuild_recenters_with_the_state() {
        let positions: Vec<(f64, f64)> = (0..9).map(|i| (50.0 + i as f64 * 0.25, 40.0)).collect();
        let buf = full_buffer_of(&positions);
        let mut window = ModelWindow::build(&buf, &FeatureState::seed(50.0, 40.0), 7).unwrap();
        window.rebuild(&buf, &FeatureState::seed(51.0, 40.0)).unwrap();
        assert_eq!(window.center(), [51, 40]);
        // Mass unchanged, content shifted one pixel.
        assert!((window.mass() - 9.0).abs() < 1e-12);
        assert!(window.value_at([-1, 0]) > 0.0);
    }
}
