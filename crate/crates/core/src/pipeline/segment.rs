use super::{ClassLabel, Group, LabeledExample, PipelineError, Provenance};
use crate::ingest::{Recording, RecordingId};
use crate::{Modality, Tensor};

/// The Intention or Actual part of one recording. `data` has time on
/// axis 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSegment {
    pub source: RecordingId,
    pub modality: Modality,
    pub group: Group,
    /// Samples (or frames) per second.
    pub rate: u32,
    pub data: Tensor<f32>,
}

impl GroupSegment {
    pub fn len(&self) -> usize {
        self.data.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keep every `step`-th time step, starting with the first.
    pub fn subsample(&self, step: usize) -> GroupSegment {
        let step = step.max(1);
        if step == 1 {
            return self.clone();
        }
        let row = self.data.row_len();
        let kept: Vec<usize> = (0..self.len()).step_by(step).collect();
        let mut data = Vec::with_capacity(kept.len() * row);
        for &t in &kept {
            data.extend_from_slice(&self.data.data()[t * row..(t + 1) * row]);
        }
        let mut shape = self.data.shape().to_vec();
        shape[0] = kept.len();
        GroupSegment {
            data: Tensor::from_vec(&shape, data),
            rate: (self.rate as usize).div_ceil(step) as u32,
            ..self.clone()
        }
    }
}

/// Index of the first Actual sample: `intention_seconds × rate` rounded
/// half up.
pub fn intention_boundary(intention_seconds: f64, rate: u32) -> Result<usize, PipelineError> {
    if !(intention_seconds.is_finite() && intention_seconds > 0.0) {
        return Err(PipelineError::BadIntention(intention_seconds));
    }
    Ok((intention_seconds * rate as f64 + 0.5).floor() as usize)
}

/// Cut a recording into its Intention segment `[0, boundary)` and Actual
/// segment `[boundary, N)`.
pub fn split_groups(rec: &Recording, intention_seconds: f64) -> Result<(GroupSegment, GroupSegment), PipelineError> {
    let (data, rate) = match rec {
        Recording::Signal(s) => (&s.rows, s.sample_rate_hz),
        Recording::Frames(f) => (&f.frames, f.fps),
    };
    let boundary = intention_boundary(intention_seconds, rate)?;
    let len = data.dim(0);
    if len <= boundary {
        return Err(PipelineError::TooShort { len, boundary });
    }
    let make = |group, start, end| GroupSegment {
        source: rec.id(),
        modality: rec.modality(),
        group,
        rate,
        data: data.slice_rows(start, end),
    };
    Ok((make(Group::Intention, 0, boundary), make(Group::Actual, boundary, len)))
}

/// Stride between consecutive windows for the given overlap fraction.
pub fn window_stride(length: usize, overlap: f64) -> usize {
    ((length as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Start indices of every full window of `length` in a segment of `n`
/// steps.
pub fn window_starts(n: usize, length: usize, overlap: f64) -> Result<Vec<usize>, PipelineError> {
    if length == 0 {
        return Err(PipelineError::Config("window length must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(PipelineError::Config(format!("overlap {overlap} outside [0, 1)")));
    }
    if n < length {
        return Ok(Vec::new());
    }
    let stride = window_stride(length, overlap);
    Ok((0..=n - length).step_by(stride).collect())
}

/// Fixed-length windows of one segment, labeled by its activity and group.
pub fn segment_windows(seg: &GroupSegment, length: usize, overlap: f64) -> Result<Vec<LabeledExample>, PipelineError> {
    let starts = window_starts(seg.len(), length, overlap)?;
    if starts.is_empty() {
        log::warn!(
            "{:?} segment of {:?} has {} steps, shorter than window {length}; no windows emitted",
            seg.group,
            seg.source,
            seg.len()
        );
    }
    let label = ClassLabel::new(seg.source.activity, seg.group);
    Ok(starts
        .into_iter()
        .map(|start| LabeledExample {
            label,
            window: seg.data.slice_rows(start, start + length),
            provenance: Provenance {
                recording: seg.source,
                group: seg.group,
                start: start as u32,
                copy: 0,
                variant: 0,
            },
        })
        .collect())
}
