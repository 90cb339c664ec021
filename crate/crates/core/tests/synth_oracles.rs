//! Non-learned separability checks on the default synthetic dataset.

use intentlab::synth::{synth_frame_dataset, synth_signal_dataset, SynthSpec};
use intentlab::Activity;

/// Brute-force window starts: every `k·hop` with `k·hop + len ≤ n`.
fn starts(n: usize, len: usize, hop: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut s = 0;
    while s + len <= n {
        out.push(s);
        s += hop;
    }
    out
}

#[test]
fn channel_energy_argmax_labels_actual_windows() {
    let spec = SynthSpec::default();
    let recs = synth_signal_dataset(&spec).unwrap();
    assert_eq!(recs.len(), 48);
    let boundary = (spec.intention_seconds * spec.sample_rate_hz as f64) as usize;
    let (mut hit, mut total) = (0usize, 0usize);
    for rec in &recs {
        let c = rec.channels();
        let rows = rec.rows.data();
        let n = rec.len() - boundary;
        for s in starts(n, 100, 50) {
            let mut energy = vec![0.0f64; c];
            for r in boundary + s..boundary + s + 100 {
                for (ch, e) in energy.iter_mut().enumerate() {
                    let v = rows[r * c + ch] as f64;
                    *e += v * v;
                }
            }
            let best = (0..c).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
            hit += usize::from(best == rec.id.activity.index());
            total += 1;
        }
    }
    let acc = hit as f64 / total as f64;
    assert!(acc >= 0.95, "energy oracle accuracy {acc}");
}

#[test]
fn intention_is_weaker_than_actual() {
    let spec = SynthSpec::default();
    let boundary = (spec.intention_seconds * spec.sample_rate_hz as f64) as usize;
    for rec in synth_signal_dataset(&spec).unwrap() {
        let c = rec.channels();
        let rms = |rows: &[f32]| (rows.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / rows.len() as f64).sqrt();
        let (head, tail) = rec.rows.data().split_at(boundary * c);
        assert!(rms(head) < rms(tail), "{:?}", rec.id);
    }
}

/// Centroid of above-background intensity per frame, in pixels.
fn centroids(frames: &[f32], t: usize, h: usize, w: usize) -> Vec<(f64, f64)> {
    (0..t)
        .map(|f| {
            let (mut sx, mut sy, mut sm) = (0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let px = &frames[((f * h + y) * w + x) * 3..][..3];
                    let m = (px.iter().map(|&v| v as f64).sum::<f64>() / 3.0 - 0.25 - 0.08).max(0.0);
                    sx += m * x as f64;
                    sy += m * y as f64;
                    sm += m;
                }
            }
            (sx / sm, sy / sm)
        })
        .collect()
}

struct Motion {
    var_x: f64,
    var_y: f64,
    corr: f64,
}

fn motion(track: &[(f64, f64)]) -> Motion {
    let n = track.len() as f64;
    let mx = track.iter().map(|p| p.0).sum::<f64>() / n;
    let my = track.iter().map(|p| p.1).sum::<f64>() / n;
    let var_x = track.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
    let var_y = track.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
    let cov = track.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    Motion {
        var_x,
        var_y,
        corr: cov / (var_x * var_y).sqrt().max(1e-12),
    }
}

fn classify(m: &Motion) -> Activity {
    let (lo, hi) = (m.var_x.min(m.var_y), m.var_x.max(m.var_y));
    if lo < 0.1 * hi {
        if m.var_y > m.var_x {
            Activity::Lifting
        } else {
            Activity::Carrying
        }
    } else if m.corr.abs() > 0.8 {
        Activity::Holding
    } else {
        Activity::Mounting
    }
}

#[test]
fn centroid_displacement_separates_activities() {
    let spec = SynthSpec::default();
    let seqs = synth_frame_dataset(&spec).unwrap();
    assert_eq!(seqs.len(), 48);
    let [h, w] = spec.frame_size;
    let boundary = (spec.intention_seconds * spec.fps as f64) as usize;
    for seq in &seqs {
        let data = seq.frames.data();
        assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        let track = centroids(data, seq.len(), h, w);
        let actual = motion(&track[boundary..]);
        assert_eq!(classify(&actual), seq.id.activity, "{:?}", seq.id);
        let intention = motion(&track[..boundary]);
        assert!(
            intention.var_x + intention.var_y < 0.5 * (actual.var_x + actual.var_y),
            "{:?}: intention displacement not reduced",
            seq.id
        );
    }
}

#[test]
fn frame_difference_energy_orders_groups() {
    let spec = SynthSpec::default();
    let [h, w] = spec.frame_size;
    let boundary = (spec.intention_seconds * spec.fps as f64) as usize;
    let frame = h * w * 3;
    for seq in synth_frame_dataset(&spec).unwrap() {
        let d = seq.frames.data();
        let diff = |range: std::ops::Range<usize>| {
            let k = range.len() as f64;
            range
                .map(|f| {
                    d[f * frame..(f + 1) * frame]
                        .iter()
                        .zip(&d[(f + 1) * frame..(f + 2) * frame])
                        .map(|(a, b)| (a - b).abs() as f64)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / k
        };
        let intention = diff(0..boundary - 1);
        let actual = diff(boundary..seq.len() - 1);
        assert!(intention < actual, "{:?}: {intention} vs {actual}", seq.id);
    }
}
