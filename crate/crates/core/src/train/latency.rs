use std::time::Instant;

use super::TrainError;
use crate::engine::{Mode, Tape};
use crate::models::{Checkpoint, ForwardCtx};
use crate::rng::CountingRng;
use crate::Tensor;

pub const MIN_LATENCY_SAMPLES: usize = 100;

/// Per-sample inference wall times with summary statistics.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyReport {
    pub model: String,
    pub precision: String,
    pub batch_size: usize,
    pub warmup: usize,
    pub threads: usize,
    pub hardware: String,
    /// Warmup excluded.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
}

impl LatencyReport {
    fn from_samples(samples_ms: Vec<f64>, warmup: usize) -> Self {
        let n = samples_ms.len();
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        // nearest rank
        let p95_ms = sorted[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencyReport {
            model: String::new(),
            precision: String::new(),
            batch_size: 1,
            warmup,
            threads: 1,
            hardware: hardware_descriptor(),
            mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
            median_ms,
            p95_ms,
            samples_ms,
        }
    }

    /// Raw timings followed by a `#`-prefixed summary block.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,ms\n");
        for (i, t) in self.samples_ms.iter().enumerate() {
            s.push_str(&format!("{i},{t}\n"));
        }
        s.push_str(&format!(
            "# model,{}\n# precision,{}\n# batch_size,{}\n# warmup,{}\n# threads,{}\n# hardware,{}\n# samples,{}\n# mean_ms,{}\n# median_ms,{}\n# p95_ms,{}\n",
            self.model,
            self.precision,
            self.batch_size,
            self.warmup,
            self.threads,
            self.hardware.replace(',', ";"),
            self.samples_ms.len(),
            self.mean_ms,
            self.median_ms,
            self.p95_ms
        ));
        s
    }
}

/// CPU model and logical core count, best effort.
pub fn hardware_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
        s.lines()
            .find(|l| l.starts_with("model name"))
            .and_then(|l| l.split_once(':'))
            .map(|(_, v)| v.trim().to_string())
    });
    format!(
        "{} ({} logical cpus, {})",
        model.unwrap_or_else(|| std::env::consts::ARCH.to_string()),
        cpus,
        std::env::consts::OS
    )
}

/// Time `samples` calls of `f` after `warmup` untimed ones.
pub fn time_calls<F>(samples: usize, warmup: usize, mut f: F) -> Result<LatencyReport, TrainError>
where
    F: FnMut(usize) -> Result<(), TrainError>,
{
    if samples < MIN_LATENCY_SAMPLES {
        return Err(TrainError::TooFewSamples {
            got: samples,
            min: MIN_LATENCY_SAMPLES,
        });
    }
    for i in 0..warmup {
        f(i)?;
    }
    let mut times = Vec::with_capacity(samples);
    for i in 0..samples {
        let start = Instant::now();
        f(warmup + i)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyReport::from_samples(times, warmup))
}

/// Batch-1, 32-bit, eval-mode forward latency of `ckpt` on a single thread.
/// `inputs` (one example each, no batch axis) are cycled through.
pub fn latency_bench(
    ckpt: &Checkpoint,
    inputs: &[Tensor<f64>],
    samples: usize,
    warmup: usize,
) -> Result<LatencyReport, TrainError> {
    if inputs.is_empty() {
        return Err(TrainError::TooFewSamples {
            got: 0,
            min: MIN_LATENCY_SAMPLES,
        });
    }
    let params = ckpt.params.cast::<f32>();
    let inputs: Vec<Tensor<f32>> = inputs
        .iter()
        .map(|t| {
            let mut shape = vec![1];
            shape.extend_from_slice(t.shape());
            t.cast::<f32>().reshape(&shape).expect("same element count")
        })
        .collect();
    let model = &ckpt.config;
    let mut report = crate::par::install(1, || {
        let mut rng = CountingRng::new(0);
        time_calls(samples, warmup, |i| {
            let mut tape = Tape::<f32>::no_grad();
            let x = tape.constant(inputs[i % inputs.len()].clone());
            let out = model.forward(&mut tape, &params, x, &mut ForwardCtx::new(Mode::Eval, &mut rng))?;
            std::hint::black_box(tape.value(out.probs));
            Ok(())
        })
    })?;
    report.model = model.name().to_string();
    report.precision = "f32".into();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn too_few_samples() {
        assert!(matches!(time_calls(0, 0, |_| Ok(())), Err(TrainError::TooFewSamples { got: 0, .. })));
        assert!(time_calls(99, 5, |_| Ok(())).is_err());
    }

    #[test]
    fn sleeping_stub_timing() {
        let mut calls = 0;
        let r = time_calls(100, 3, |_| {
            calls += 1;
            std::thread::sleep(Duration::from_millis(1));
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 103);
        assert_eq!(r.samples_ms.len(), 100);
        assert!((1.0..=3.0).contains(&r.mean_ms), "mean {}", r.mean_ms);
        assert!(r.median_ms <= r.p95_ms);
        assert!(r.to_csv().contains("# mean_ms,"));
    }

    #[test]
    fn summary_statistics() {
        let r = LatencyReport::from_samples((1..=100).map(f64::from).collect(), 0);
        assert_eq!(r.mean_ms, 50.5);
        assert_eq!(r.median_ms, 50.5);
        assert_eq!(r.p95_ms, 95.0);
    }
}
