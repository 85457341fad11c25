//! Random orbits, return times to `Q`, Birkhoff averages and empirical
//! recurrence.
//!
//! Orbit indexing: `points[0]` is the start and `points[k + 1]` is the image
//! of `points[k]` under `f_{t_{k+1}}`, where `t_{k+1} = sequence[k]`.
//! `labels[k]` always classifies `points[k]`, so a return at time `n`
//! is an index `n >= 1` with label `InQ`.

use std::hash::Hasher;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::NoiseError;
use crate::model::{ModelParams, Point, RegionLabel};
use crate::noise::{sample_sequence_stream, NoiseKernel, NoiseSequence, NoiseStream};
use crate::observables::Observable;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub start: Point,
    pub sequence: NoiseSequence,
    pub points: Vec<Point>,
    pub labels: Vec<RegionLabel>,
    /// Index of the point whose image left `L`.
    pub escaped_at: Option<usize>,
}

impl OrbitRecord {
    /// Number of steps actually taken.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }
}

/// Iterates `x0` under a fixed sequence.
pub fn orbit_with_sequence(model: &ModelParams, x0: Point, sequence: NoiseSequence) -> OrbitRecord {
    let mut points = Vec::with_capacity(sequence.len() + 1);
    let mut labels = Vec::with_capacity(sequence.len() + 1);
    points.push(x0);
    labels.push(model.classify(&x0));
    let mut escaped_at = None;
    let mut x = x0;
    for (k, &t) in sequence.values.iter().enumerate() {
        match model.step(&x, t) {
            Some(y) => {
                x = y;
                points.push(y);
                labels.push(model.classify(&y));
            }
            None => {
                escaped_at = Some(k);
                break;
            }
        }
    }
    OrbitRecord { start: x0, sequence, points, labels, escaped_at }
}

/// `n` steps from `x0` with the sequence drawn from stream 0 of `seed`.
pub fn random_orbit(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x0: Point,
    n: usize,
    seed: u64,
) -> Result<OrbitRecord, NoiseError> {
    random_orbit_stream(model, kernel, x0, n, seed, 0)
}

pub fn random_orbit_stream(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x0: Point,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<OrbitRecord, NoiseError> {
    let seq = sample_sequence_stream(kernel, n, seed, stream)?;
    Ok(orbit_with_sequence(model, x0, seq))
}

/// Streams an orbit without storing it. `visit(k, x_k, label_k)` is called
/// for `k = 0..=n` until it breaks. Returns the escape index, if any.
pub fn drive<F>(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x0: Point,
    n: usize,
    seed: u64,
    stream: u64,
    mut visit: F,
) -> Result<Option<usize>, NoiseError>
where
    F: FnMut(usize, &Point, RegionLabel) -> ControlFlow<()>,
{
    let mut rng = NoiseStream::new(seed, stream);
    let mut x = x0;
    if visit(0, &x, model.classify(&x)).is_break() {
        return Ok(None);
    }
    for k in 0..n {
        let t = rng.value(kernel, k as u64)?;
        match model.step(&x, t) {
            Some(y) => x = y,
            None => return Ok(Some(k)),
        }
        if visit(k + 1, &x, model.classify(&x)).is_break() {
            break;
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReturnTimes {
    /// `r(k)` for `k = 1, 2, …`.
    pub times: Vec<usize>,
    /// Cumulative return iterates `R(k) = r(1) + … + r(k)`.
    pub cumulative: Vec<usize>,
    /// The horizon (or an escape) ended the record before a further return.
    pub truncated: bool,
}

/// Return times read off a label sequence whose entry 0 is the start.
pub fn return_times_from_labels(labels: &[RegionLabel], escaped: bool) -> ReturnTimes {
    let mut rt = ReturnTimes::default();
    let mut last = 0;
    for (k, l) in labels.iter().enumerate().skip(1) {
        if *l == RegionLabel::InQ {
            rt.times.push(k - last);
            rt.cumulative.push(k);
            last = k;
        }
    }
    rt.truncated = escaped || labels.len() <= 1 || last != labels.len() - 1;
    rt
}

pub fn return_times(record: &OrbitRecord) -> ReturnTimes {
    return_times_from_labels(&record.labels, record.escaped_at.is_some())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BirkhoffAverage {
    pub value: f64,
    /// Number of points averaged.
    pub n_points: usize,
    /// The orbit escaped before the horizon; only the recorded prefix was used.
    pub escaped: bool,
}

/// `(1/n) Σ_{j<n} φ(points[j])` where `n` is the number of steps taken, or
/// the whole recorded prefix for an escaped orbit.
pub fn birkhoff_average(record: &OrbitRecord, phi: &Observable) -> BirkhoffAverage {
    let escaped = record.escaped_at.is_some();
    let n = if escaped || record.points.len() == 1 { record.points.len() } else { record.points.len() - 1 };
    let sum: f64 = record.points[..n].iter().map(|p| phi.eval(p)).sum();
    BirkhoffAverage { value: sum / n as f64, n_points: n, escaped }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub n_sequences: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub fraction_recurrent: f64,
    pub n_escaped: usize,
    /// Largest observed gap between consecutive returns over recurrent
    /// sequences (empirical uniform return bound).
    pub max_return_gap: Option<usize>,
    /// Every sampled sequence produced the same list of return iterates.
    pub return_times_sequence_independent: bool,
    /// Leading return iterates of sequence 0, for reference.
    pub leading_returns: Vec<usize>,
}

#[derive(Clone, Debug)]
struct SequenceSummary {
    escaped: bool,
    stayed: bool,
    returns_after_burn_in: usize,
    last_return: usize,
    max_gap: usize,
    fingerprint: u64,
    leading: Vec<usize>,
}

impl SequenceSummary {
    fn recurrent(&self, horizon: usize) -> bool {
        !self.escaped
            && self.stayed
            && self.returns_after_burn_in >= 2
            && horizon - self.last_return <= self.max_gap
    }
}

fn summarize(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x0: Point,
    horizon: usize,
    burn_in: usize,
    seed: u64,
    stream: u64,
) -> Result<SequenceSummary, NoiseError> {
    let mut s = SequenceSummary {
        escaped: false,
        stayed: true,
        returns_after_burn_in: 0,
        last_return: 0,
        max_gap: 0,
        fingerprint: 0,
        leading: Vec::new(),
    };
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    let escaped = drive(model, kernel, x0, horizon, seed, stream, |k, _, l| {
        if k >= burn_in && !l.in_u_or_q() {
            s.stayed = false;
        }
        if k >= 1 && l == RegionLabel::InQ {
            s.max_gap = s.max_gap.max(k - s.last_return);
            s.last_return = k;
            if k >= burn_in {
                s.returns_after_burn_in += 1;
            }
            hasher.write_usize(k);
            if s.leading.len() < 16 {
                s.leading.push(k);
            }
        }
        ControlFlow::Continue(())
    })?;
    s.escaped = escaped.is_some();
    if s.escaped {
        hasher.write_u8(0xff);
    }
    s.fingerprint = hasher.finish();
    Ok(s)
}

/// Monte Carlo test of the recurrence conditions up to a finite horizon.
///
/// A sequence counts as recurrent when its orbit never escapes, stays in
/// `U ∪ Q` from `burn_in` on, returns to `Q` at least twice after
/// `burn_in`, and the wait from its last return to the horizon is no
/// longer than its largest gap.
pub fn classify_recurrence(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x0: Point,
    n_sequences: usize,
    horizon: usize,
    burn_in: usize,
    seed: u64,
) -> Result<RecurrenceReport, NoiseError> {
    assert!(horizon > burn_in, "horizon must exceed burn_in");
    let summaries = (0..n_sequences as u64)
        .into_par_iter()
        .map(|i| summarize(model, kernel, x0, horizon, burn_in, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let recurrent: Vec<&SequenceSummary> = summaries.iter().filter(|s| s.recurrent(horizon)).collect();
    let max_return_gap = recurrent.iter().map(|s| s.max_gap).max();
    let independent = !summaries.is_empty()
        && summaries.iter().all(|s| !s.escaped && s.fingerprint == summaries[0].fingerprint);
    Ok(RecurrenceReport {
        n_sequences,
        horizon,
        burn_in,
        fraction_recurrent: if n_sequences == 0 { 0.0 } else { recurrent.len() as f64 / n_sequences as f64 },
        n_escaped: summaries.iter().filter(|s| s.escaped).count(),
        max_return_gap,
        return_times_sequence_independent: independent,
        leading_returns: summaries.first().map(|s| s.leading.clone()).unwrap_or_default(),
    })
}

/// Scans a lattice of candidate starts inside `Q` and keeps those that are
/// recurrent for every sampled sequence with sequence-independent returns.
pub fn find_regular_points(
    model: &ModelParams,
    kernel: &NoiseKernel,
    per_axis: usize,
    n_sequences: usize,
    horizon: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<(Point, RecurrenceReport)>, NoiseError> {
    let q = &model.regions.q_box;
    let n = per_axis.max(1);
    let at = |i: usize, a: usize| q.lo[a] + (q.hi[a] - q.lo[a]) * (i as f64 + 0.5) / n as f64;
    let mut found = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = Point::new(at(i, 0), at(j, 1), at(k, 2));
                let r = classify_recurrence(model, kernel, x, n_sequences, horizon, burn_in, seed)?;
                if r.fraction_recurrent == 1.0 && r.return_times_sequence_independent {
                    found.push((x, r));
                }
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegionLabel::*;
    use proptest::prelude::*;

    fn setup() -> (ModelParams, NoiseKernel) {
        (ModelParams::default(), NoiseKernel::uniform(0.055, 0.01).unwrap())
    }

    #[test]
    fn saddle_is_fixed() {
        let (m, k) = setup();
        let r = random_orbit(&m, &k, Point::SADDLE, 50, 3).unwrap();
        assert!(r.points.iter().all(|p| *p == Point::SADDLE));
        assert_eq!(r.escaped_at, None);
        let rt = return_times(&r);
        assert!(rt.times.is_empty() && rt.truncated);
    }

    #[test]
    fn outside_start_escapes_immediately() {
        let (m, k) = setup();
        let r = random_orbit(&m, &k, Point::new(10.0, 10.0, 10.0), 20, 3).unwrap();
        assert_eq!(r.escaped_at, Some(0));
        assert_eq!(r.points.len(), 1);
        assert_eq!(r.labels, vec![Outside]);
    }

    #[test]
    fn replay_oracle() {
        let (m, k) = setup();
        let r = random_orbit(&m, &k, Point::TANGENCY, 200, 42).unwrap();
        let mut x = Point::TANGENCY;
        for (i, t) in r.sequence.values.iter().enumerate().take(r.steps()) {
            assert_eq!(r.labels[i], m.classify(&x));
            x = m.step(&x, *t).unwrap();
            assert_eq!(r.points[i + 1], x);
        }
    }

    #[test]
    fn itinerary_example() {
        // Labels of f^1..f^6 after a start in L.
        let labels = [InLOnly, InLOnly, InR, InQ, InLOnly, InR, InQ];
        let rt = return_times_from_labels(&labels, false);
        assert_eq!(rt.times, vec![3, 3]);
        assert_eq!(rt.cumulative, vec![3, 6]);
        assert!(!rt.truncated);
    }

    #[test]
    fn birkhoff_examples() {
        let (m, k) = setup();
        let r = random_orbit(&m, &k, Point::SADDLE, 30, 1).unwrap();
        assert_eq!(birkhoff_average(&r, &Observable::constant(2.5)).value, 2.5);
        assert_eq!(birkhoff_average(&r, &Observable::coordinate(0)).value, 0.0);
        let r = random_orbit(&m, &k, Point::new(0.05, 1.0, 1.0), 1000, 9).unwrap();
        let ind = Observable::region_indicator(&m, InQ);
        let direct = r.labels[..1000].iter().filter(|l| **l == InQ).count() as f64 / 1000.0;
        assert_eq!(birkhoff_average(&r, &ind).value, direct);
    }

    #[test]
    fn recurrence_trivial_cases() {
        let (m, k) = setup();
        let r = classify_recurrence(&m, &k, Point::SADDLE, 8, 500, 50, 1).unwrap();
        assert_eq!(r.fraction_recurrent, 0.0);
        assert_eq!(r.max_return_gap, None);
        let r = classify_recurrence(&m, &k, Point::new(-0.05, 1.0, 1.0), 8, 500, 50, 1).unwrap();
        assert_eq!(r.fraction_recurrent, 0.0);
        assert_eq!(r.n_escaped, 8);
    }

    #[test]
    fn regular_start_has_sequence_independent_returns() {
        let (m, k) = setup();
        let r = classify_recurrence(&m, &k, Point::new(0.05, 1.0, 1.0), 1000, 2000, 100, 5).unwrap();
        assert_eq!(r.fraction_recurrent, 1.0);
        assert!(r.return_times_sequence_independent);
        assert_eq!(r.max_return_gap, Some(5));
    }

    #[test]
    fn drive_matches_record() {
        let (m, k) = setup();
        let r = random_orbit_stream(&m, &k, Point::new(0.03, 0.9, 1.1), 300, 8, 4).unwrap();
        let mut seen = Vec::new();
        drive(&m, &k, Point::new(0.03, 0.9, 1.1), 300, 8, 4, |_, p, _| {
            seen.push(*p);
            ControlFlow::Continue(())
        })
        .unwrap();
        assert_eq!(seen, r.points);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn orbit_invariants(seed in any::<u64>(), z in -0.1f64..0.1, x1 in 0.8f64..1.2, x2 in 0.8f64..1.2) {
            let (m, k) = setup();
            let r = random_orbit(&m, &k, Point::new(z, x1, x2), 400, seed).unwrap();
            let again = random_orbit(&m, &k, Point::new(z, x1, x2), 400, seed).unwrap();
            prop_assert_eq!(&r, &again);
            for i in 1..r.labels.len() {
                if r.labels[i] == InQ {
                    prop_assert_eq!(r.labels[i - 1], InR);
                }
            }
            let rt = return_times(&r);
            let q_idx: Vec<usize> = (1..r.labels.len()).filter(|i| r.labels[*i] == InQ).collect();
            prop_assert_eq!(&rt.cumulative, &q_idx);
            let phi = Observable::coordinate(1);
            let b = birkhoff_average(&r, &phi).value;
            let lo = r.points.iter().map(|p| p.x1).fold(f64::INFINITY, f64::min);
            let hi = r.points.iter().map(|p| p.x1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= b && b <= hi + 1e-12);
        }
    }
}
