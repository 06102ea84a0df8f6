//! Property tests for the geometric and buffering primitives.

use proptest::prelude::*;

use eecc::density::bilinear_weights;
use eecc::event::{Event, EventBuffer};
use eecc::warp::{warp_from_template, warp_to_template, wrap_angle, FeatureState};

proptest! {
    #[test]
    fn bilinear_weights_are_a_partition_of_unity(
        x in -1e6f64..1e6,
        y in -1e6f64..1e6,
    ) {
        let (base, weights) = bilinear_weights([x, y]);
        prop_assert!(weights.iter().all(|w| (0.0..=1.0).contains(w)));
        let sum: f64 = weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(base[0] as f64 <= x && x < base[0] as f64 + 1.0);
        prop_assert!(base[1] as f64 <= y && y < base[1] as f64 + 1.0);
    }

    #[test]
    fn wrap_angle_stays_in_range_and_on_the_circle(theta in -1e3f64..1e3) {
        let w = wrap_angle(theta);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!((w.sin() - theta.sin()).abs() < 1e-6);
        prop_assert!((w.cos() - theta.cos()).abs() < 1e-6);
    }

    #[test]
    fn warp_round_trips(
        cx in -500.0f64..500.0,
        cy in -500.0f64..500.0,
        theta in -10.0f64..10.0,
        px in -500.0f64..500.0,
        py in -500.0f64..500.0,
    ) {
        let state = FeatureState::new(cx, cy, theta);
        let back = warp_from_template(warp_to_template([px, py], &state), &state);
        prop_assert!((back[0] - px).abs() < 1e-9);
        prop_assert!((back[1] - py).abs() < 1e-9);
    }

    /// FIFO semantics against a naive list model, including rejection of
    /// out-of-order pushes.
    #[test]
    fn event_buffer_matches_naive_queue(
        timestamps in proptest::collection::vec(0i64..1000, 1..400),
        capacity_halves in 1usize..40,
    ) {
        let capacity = 2 * capacity_halves + 1;
        let mut buffer = EventBuffer::with_capacity(capacity);
        let mut naive: Vec<i64> = Vec::new();
        for (i, &t) in timestamps.iter().enumerate() {
            let event = Event::new(t, i as f64, 0.0, 1);
            let newest = naive.last().copied();
            match buffer.push(event) {
                Ok(evicted) => {
                    prop_assert!(newest.map_or(true, |n| t >= n));
                    naive.push(t);
                    if naive.len() > capacity {
                        let dropped = naive.remove(0);
                        prop_assert_eq!(evicted.map(|e| e.t_us), Some(dropped));
                    } else {
                        prop_assert!(evicted.is_none());
                    }
                }
                Err(_) => {
                    prop_assert!(newest.is_some_and(|n| t < n));
                }
            }
        }
        let got: Vec<i64> = buffer.iter().map(|e| e.t_us).collect();
        if buffer.len() > buffer.half_size() {
            prop_assert_eq!(
                buffer.central().map(|e| e.t_us),
                naive.get(buffer.half_size()).copied()
            );
        }
        prop_assert_eq!(got, naive);
    }
}
