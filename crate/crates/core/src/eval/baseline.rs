use crate::detectors::delivery_schedule;
use crate::propagation::DetectionSet;

/// Hold-last comparator: each frame shows the most recently delivered
/// detector output unchanged.
///
/// `outputs[i]` is what the detector returns when run on frame `i`; delivery
/// follows the same frame-latency schedule as the pipeline.
pub fn hold_last_baseline(outputs: &[DetectionSet], latency_frames: usize) -> Vec<DetectionSet> {
    let schedule = delivery_schedule(outputs.len(), latency_frames);
    let mut held: Option<&DetectionSet> = None;
    schedule
        .iter()
        .enumerate()
        .map(|(i, delivered)| {
            if let Some(src) = delivered {
                held = Some(&outputs[*src]);
            }
            held.map_or_else(|| DetectionSet::empty(i), |d| d.at_frame(i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::Detection;

    fn outputs(n: usize) -> Vec<DetectionSet> {
        (0..n)
            .map(|i| DetectionSet::new(i, vec![Detection::new(i as f64, 0.0, 5.0, 5.0, 1.0, 0).unwrap()]))
            .collect()
    }

    #[test]
    fn zero_latency_is_identity() {
        let o = outputs(10);
        assert_eq!(hold_last_baseline(&o, 0), o);
    }

    #[test]
    fn holds_between_deliveries() {
        let o = outputs(12);
        let held = hold_last_baseline(&o, 5);
        let xs: Vec<f64> = held.iter().map(|s| s.detections[0].x).collect();
        assert_eq!(xs, vec![0., 0., 0., 0., 0., 0., 1., 1., 1., 1., 1., 6.]);
        assert!(held.iter().enumerate().all(|(i, s)| s.frame_index == i));
    }
}
