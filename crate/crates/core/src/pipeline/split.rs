use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{ClassLabel, Group, LabeledExample, PipelineError};
use crate::ingest::RecordingId;
use crate::rng;

/// What stays together when assigning examples to splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    /// Individual windows; overlapping windows of one recording may land in
    /// different splits.
    Example,
    /// All windows of one recording segment go to the same split.
    Recording,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitAssignment {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub ratios: [f64; 3],
}

impl SplitAssignment {
    pub fn parts(&self) -> [&[LabeledExample]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn validate_ratios(ratios: [f64; 3]) -> Result<(), PipelineError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(PipelineError::BadRatios(format!("{ratios:?}: every ratio must be positive")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::BadRatios(format!("{ratios:?} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Split `n` units by `ratios` so every count is within 1 of `n·ratio`.
///
/// Largest remainder first; then, when `n ≥ 3`, an empty split borrows one
/// unit from a split holding at least its ideal share, which keeps both
/// within the ±1 band.
pub(crate) fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let ideal = ratios.map(|r| n as f64 * r);
    let mut counts = ideal.map(|v| v.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (fa, fb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    if n >= 3 {
        for j in 0..3 {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..3)
                .filter(|&i| i != j && counts[i] > 1 && counts[i] as f64 >= ideal[i])
                .max_by(|&a, &b| {
                    let (sa, sb) = (counts[a] as f64 - ideal[a], counts[b] as f64 - ideal[b]);
                    sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
                });
            if let Some(i) = donor {
                counts[i] -= 1;
                counts[j] += 1;
            }
        }
    }
    counts
}

type UnitKey = (RecordingId, Group, u32);

fn unit_key(e: &LabeledExample, unit: SplitUnit) -> UnitKey {
    let p = &e.provenance;
    match unit {
        SplitUnit::Example => (p.recording, p.group, p.start),
        SplitUnit::Recording => (p.recording, p.group, 0),
    }
}

/// Stratified train/validation/test split.
///
/// Strata are `(class, subject)`. Within a stratum the units (windows or
/// whole recording segments) are sorted, shuffled with a stream derived
/// from `seed` and the stratum, and dealt out by [`allocate`]. Each split
/// is returned sorted by provenance, so the result does not depend on the
/// input order.
pub fn stratified_split(
    examples: &[LabeledExample],
    ratios: [f64; 3],
    unit: SplitUnit,
    seed: u64,
) -> Result<SplitAssignment, PipelineError> {
    validate_ratios(ratios)?;
    for label in ClassLabel::ALL {
        if !examples.iter().any(|e| e.label == label) {
            return Err(PipelineError::EmptyClass(label));
        }
    }
    let mut strata: BTreeMap<(ClassLabel, u32), BTreeMap<UnitKey, Vec<&LabeledExample>>> = BTreeMap::new();
    for e in examples {
        strata
            .entry((e.label, e.provenance.recording.subject_id))
            .or_default()
            .entry(unit_key(e, unit))
            .or_default()
            .push(e);
    }
    let mut out = SplitAssignment {
        ratios,
        ..Default::default()
    };
    for ((label, subject), units) in strata {
        let mut units: Vec<Vec<&LabeledExample>> = units.into_values().collect();
        let mut rng = rng::stream(seed, &[0x5b11, label.id() as u64, subject as u64]);
        units.shuffle(&mut rng);
        let counts = allocate(units.len(), ratios);
        let mut it = units.into_iter();
        for (split, &c) in [&mut out.train, &mut out.validation, &mut out.test].into_iter().zip(&counts) {
            for u in it.by_ref().take(c) {
                split.extend(u.into_iter().cloned());
            }
        }
    }
    for split in [&mut out.train, &mut out.validation, &mut out.test] {
        split.sort_by_key(|e| e.provenance);
    }
    Ok(out)
}

/// Repeat every example whose group is in `target_groups` so it appears
/// `factor` times in total, then shuffle with `seed`.
pub fn oversample_minority(
    examples: &[LabeledExample],
    factor: usize,
    target_groups: &[Group],
    seed: u64,
) -> Result<Vec<LabeledExample>, PipelineError> {
    if factor == 0 {
        return Err(PipelineError::BadFactor);
    }
    let copies = u16::try_from(factor).map_err(|_| PipelineError::BadFactor)?;
    let mut sorted: Vec<&LabeledExample> = examples.iter().collect();
    sorted.sort_by_key(|e| e.provenance);
    let mut out = Vec::with_capacity(examples.len() * factor);
    for e in sorted {
        let n = if target_groups.contains(&e.provenance.group) { copies } else { 1 };
        for copy in 0..n {
            let mut d = e.clone();
            d.provenance.copy = e.provenance.copy + copy;
            out.push(d);
        }
    }
    out.shuffle(&mut rng::stream(seed, &[0x0e75]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Provenance;
    use crate::Tensor;
    use proptest::prelude::*;

    fn example(label: ClassLabel, subject: u32, trial: u32, start: u32) -> LabeledExample {
        LabeledExample {
            label,
            window: Tensor::full(&[2, 1], start as f32),
            provenance: Provenance {
                recording: RecordingId { subject_id: subject, activity: label.activity(), trial },
                group: label.group(),
                start,
                copy: 0,
                variant: 0,
            },
        }
    }

    fn all_classes(per_class: u32) -> Vec<LabeledExample> {
        ClassLabel::ALL
            .iter()
            .flat_map(|&l| (0..per_class).map(move |s| example(l, 1, 1, s)))
            .collect()
    }

    #[test]
    fn hundred_examples_split_70_15_15() {
        let ex = all_classes(100);
        let s = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, 3).unwrap();
        for l in ClassLabel::ALL {
            let c = |v: &[LabeledExample]| v.iter().filter(|e| e.label == l).count();
            assert_eq!((c(&s.train), c(&s.validation), c(&s.test)), (70, 15, 15));
        }
    }

    #[test]
    fn ratios_validated() {
        let ex = all_classes(10);
        for bad in [[1.0, 0.0, 0.0], [0.5, 0.3, 0.3], [0.7, f64::NAN, 0.3]] {
            assert!(matches!(
                stratified_split(&ex, bad, SplitUnit::Example, 0),
                Err(PipelineError::BadRatios(_))
            ));
        }
    }

    #[test]
    fn missing_class_rejected() {
        let ex: Vec<_> = all_classes(5).into_iter().filter(|e| e.label != ClassLabel::ActualHolding).collect();
        assert!(matches!(
            stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, 0),
            Err(PipelineError::EmptyClass(ClassLabel::ActualHolding))
        ));
    }

    #[test]
    fn seeds_permute_within_strata_only() {
        let ex = all_classes(40);
        let a = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, 1).unwrap();
        let b = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, 1).unwrap();
        let c = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
        assert_eq!(a.train.len(), c.train.len());
    }

    #[test]
    fn recording_unit_keeps_segments_together() {
        let mut ex = Vec::new();
        for l in ClassLabel::ALL {
            for subject in 1..=3 {
                for trial in 1..=4 {
                    for start in 0..9 {
                        ex.push(example(l, subject, trial, start * 50));
                    }
                }
            }
        }
        let s = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Recording, 9).unwrap();
        let keys = |v: &[LabeledExample]| -> std::collections::BTreeSet<_> {
            v.iter().map(|e| e.provenance.recording_key()).collect()
        };
        let (a, b, c) = (keys(&s.train), keys(&s.validation), keys(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        // 4 trials per (class, subject) stratum deal out as 2/1/1
        assert_eq!((a.len(), b.len(), c.len()), (48, 24, 24));
        assert_eq!(s.len(), ex.len());
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate(100, [0.7, 0.15, 0.15]), [70, 15, 15]);
        assert_eq!(allocate(4, [0.7, 0.15, 0.15]), [2, 1, 1]);
        assert_eq!(allocate(1, [0.7, 0.15, 0.15]), [1, 0, 0]);
        assert_eq!(allocate(0, [0.7, 0.15, 0.15]), [0, 0, 0]);
    }

    #[test]
    fn oversampling_triples_intention_only() {
        let mut ex: Vec<_> = (0..10).map(|s| example(ClassLabel::LiftingIntention, 1, 1, s)).collect();
        ex.extend((0..100).map(|s| example(ClassLabel::ActualLifting, 1, 1, s)));
        let out = oversample_minority(&ex, 3, &[Group::Intention], 4).unwrap();
        let n = |g| out.iter().filter(|e| e.provenance.group == g).count();
        assert_eq!((n(Group::Intention), n(Group::Actual)), (30, 100));
        for e in &out {
            let orig = ex.iter().find(|o| o.provenance.start == e.provenance.start && o.label == e.label).unwrap();
            assert_eq!(orig.window, e.window);
        }
        let same = oversample_minority(&ex, 3, &[], 4).unwrap();
        assert_eq!(same.len(), 110);
        assert!(matches!(oversample_minority(&ex, 0, &[Group::Intention], 4), Err(PipelineError::BadFactor)));
    }

    #[test]
    fn factor_one_is_a_permutation() {
        let ex = all_classes(5);
        let mut out = oversample_minority(&ex, 1, &[Group::Intention, Group::Actual], 8).unwrap();
        out.sort_by_key(|e| (e.label, e.provenance));
        let mut sorted = ex.clone();
        sorted.sort_by_key(|e| (e.label, e.provenance));
        assert_eq!(out, sorted);
    }

    proptest! {
        #[test]
        fn allocation_within_one_of_ideal(
            n in 0usize..500,
            a in 1u32..100, b in 1u32..100, c in 1u32..100,
        ) {
            let s = (a + b + c) as f64;
            let r = [a as f64 / s, b as f64 / s, c as f64 / s];
            let r = [r[0], r[1], 1.0 - r[0] - r[1]];
            prop_assume!(r[2] > 0.0);
            let counts = allocate(n, r);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            for i in 0..3 {
                prop_assert!((counts[i] as f64 - n as f64 * r[i]).abs() <= 1.0 + 1e-9, "{:?} {:?}", counts, r);
            }
        }

        #[test]
        fn split_is_a_partition(per_class in 1u32..30, seed in any::<u64>()) {
            let ex = all_classes(per_class);
            let s = stratified_split(&ex, [0.7, 0.15, 0.15], SplitUnit::Example, seed).unwrap();
            let mut all: Vec<_> = s.parts().iter().flat_map(|p| p.iter().map(|e| (e.label, e.provenance))).collect();
            all.sort();
            let before = all.len();
            all.dedup();
            prop_assert_eq!(before, all.len());
            prop_assert_eq!(all.len(), ex.len());
        }

        #[test]
        fn oversampling_multiplies_target_groups_only(per_class in 1u32..20, factor in 1usize..5, seed in any::<u64>()) {
            let ex = all_classes(per_class);
            let out = oversample_minority(&ex, factor, &[Group::Intention], seed).unwrap();
            for label in ClassLabel::ALL {
                let before = ex.iter().filter(|e| e.label == label).count();
                let after = out.iter().filter(|e| e.label == label).count();
                let k = if label.group() == Group::Intention { factor } else { 1 };
                prop_assert_eq!(after, k * before);
            }
            // every original survives untouched as copy 0
            let originals = out.iter().filter(|e| e.provenance.copy == 0).count();
            prop_assert_eq!(originals, ex.len());
        }
    }
}
