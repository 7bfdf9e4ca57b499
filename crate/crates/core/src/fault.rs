//! Finite fault-hypothesis sets and piecewise-constant truth schedules.

use crate::error::{Error, Result};
use crate::models::FaultVector;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FaultEntry<T: Real> {
    /// 1-based position in the set.
    pub index: usize,
    pub vector: FaultVector<T>,
    pub label: String,
}

/// Ordered hypothesis set. Entry 1 is always the fault-free vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSet<T: Real> {
    entries: Vec<FaultEntry<T>>,
}

const STANDARD: [([f64; 4], &str); 17] = [
    ([1.0, 1.0, 1.0, 1.0], "fault-free"),
    ([0.0, 1.0, 1.0, 1.0], "wheel 1 failed"),
    ([1.0, 0.0, 1.0, 1.0], "wheel 2 failed"),
    ([1.0, 1.0, 0.0, 1.0], "wheel 3 failed"),
    ([1.0, 1.0, 1.0, 0.0], "wheel 4 failed"),
    ([0.5, 1.0, 1.0, 1.0], "wheel 1 at 50%"),
    ([1.0, 0.5, 1.0, 1.0], "wheel 2 at 50%"),
    ([1.0, 1.0, 0.5, 1.0], "wheel 3 at 50%"),
    ([1.0, 1.0, 1.0, 0.5], "wheel 4 at 50%"),
    ([0.0, 0.0, 1.0, 1.0], "wheels 1+2 failed"),
    ([1.0, 0.0, 0.0, 1.0], "wheels 2+3 failed"),
    ([1.0, 1.0, 0.0, 0.0], "wheels 3+4 failed"),
    ([0.0, 1.0, 1.0, 0.0], "wheels 4+1 failed"),
    ([0.5, 0.5, 1.0, 1.0], "wheels 1+2 at 50%"),
    ([1.0, 0.5, 0.5, 1.0], "wheels 2+3 at 50%"),
    ([1.0, 1.0, 0.5, 0.5], "wheels 3+4 at 50%"),
    ([0.5, 1.0, 1.0, 0.5], "wheels 4+1 at 50%"),
];

/// The 17-entry set: fault-free, four complete single failures, four 50%
/// single failures, then the four adjacent-pair complete and 50% double
/// failures.
pub fn standard_fault_set<T: Real>() -> FaultSet<T> {
    let entries = STANDARD
        .iter()
        .map(|(v, label)| (v.map(T::lit), label.to_string()))
        .collect::<Vec<_>>();
    FaultSet::from_vectors(entries).expect("standard set is valid")
}

impl<T: Real> FaultSet<T> {
    /// Builds a set from `(vector, label)` pairs, assigning indices from 1.
    pub fn from_vectors(vectors: Vec<([T; 4], String)>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::config("fault set is empty"));
        }
        let mut entries: Vec<FaultEntry<T>> = Vec::with_capacity(vectors.len());
        for (i, (v, label)) in vectors.into_iter().enumerate() {
            let vector = FaultVector::new(v)?;
            if entries.iter().any(|e| e.vector == vector) {
                return Err(Error::config(format!("duplicate fault vector at entry {}", i + 1)));
            }
            entries.push(FaultEntry {
                index: i + 1,
                vector,
                label,
            });
        }
        if entries[0].vector != FaultVector::healthy() {
            return Err(Error::config("fault set entry 1 must be (1, 1, 1, 1)"));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FaultEntry<T>] {
        &self.entries
    }

    /// Entry by 1-based index.
    pub fn get(&self, index: usize) -> Option<&FaultEntry<T>> {
        index.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &FaultVector<T>> {
        self.entries.iter().map(|e| &e.vector)
    }
}

/// Index of the Euclidean-closest entry; ties go to the lowest index.
pub fn nearest_fault<T: Real>(truth: &FaultVector<T>, set: &FaultSet<T>) -> usize {
    let mut best = (1, T::max_value().unwrap_or_else(T::one));
    for e in set.entries() {
        let d = (truth.lambda - e.vector.lambda).norm();
        if d < best.1 {
            best = (e.index, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSegment<T: Real> {
    pub t_start: f64,
    pub vector: FaultVector<T>,
}

/// Piecewise-constant, right-continuous fault truth `Lambda(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSchedule<T: Real> {
    segments: Vec<FaultSegment<T>>,
}

impl<T: Real> FaultSchedule<T> {
    pub fn new(segments: Vec<FaultSegment<T>>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::config("fault schedule is empty"))?;
        if first.t_start != 0.0 {
            return Err(Error::config("first fault segment must start at t = 0"));
        }
        if segments.windows(2).any(|w| w[1].t_start <= w[0].t_start) {
            return Err(Error::config("fault segment start times must strictly increase"));
        }
        Ok(Self { segments })
    }

    pub fn constant(vector: FaultVector<T>) -> Self {
        Self {
            segments: vec![FaultSegment { t_start: 0.0, vector }],
        }
    }

    pub fn segments(&self) -> &[FaultSegment<T>] {
        &self.segments
    }

    /// Position of the segment active at `t`.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let start = self.segments[0].t_start;
        if !(t >= start) {
            return Err(Error::ScheduleLookup { t, start });
        }
        Ok(self.segments.partition_point(|s| s.t_start <= t) - 1)
    }

    pub fn lookup(&self, t: f64) -> Result<FaultVector<T>> {
        Ok(self.segments[self.segment_index(t)?].vector)
    }
}

pub fn schedule_lookup<T: Real>(schedule: &FaultSchedule<T>, t: f64) -> Result<FaultVector<T>> {
    schedule.lookup(t)
}
