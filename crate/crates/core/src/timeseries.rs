//! Sliding-window majority vote over single-image verdicts.
//!
//! With capacity `T` the window holds the current present frame and up to
//! `T` earlier present frames. The vote `s` is the (weighted) mean of the
//! stored verdicts and the frame is flagged when `s >= 0.5`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::Verdict;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("vote weight must be finite and positive, got {0}")]
    Weight(f64),
    #[error("invalid window capacity {0:?} (expected a non-negative integer or \"all\")")]
    Capacity(String),
}

/// Number of past present frames that vote alongside the current one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Capacity {
    Frames(usize),
    All,
}

impl FromStr for Capacity {
    type Err = WindowError;

    fn from_str(s: &str) -> Result<Self, WindowError> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::Frames)
            .map_err(|_| WindowError::Capacity(s.to_string()))
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Frames(t) => write!(f, "{t}"),
            Self::All => f.write_str("all"),
        }
    }
}

/// Per-frame output of the time-series detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StreamVerdict {
    Adversarial {
        s: f64,
    },
    Clean {
        s: f64,
    },
    /// The tracked object was not in the frame.
    Absent,
}

impl StreamVerdict {
    pub fn s(&self) -> Option<f64> {
        match *self {
            Self::Adversarial { s } | Self::Clean { s } => Some(s),
            Self::Absent => None,
        }
    }

    pub fn verdict(&self) -> Option<Verdict> {
        match self {
            Self::Adversarial { .. } => Some(Verdict::Adversarial),
            Self::Clean { .. } => Some(Verdict::Clean),
            Self::Absent => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Adversarial { .. } => "adversarial",
            Self::Clean { .. } => "clean",
            Self::Absent => "absent",
        }
    }
}

#[derive(Clone, Debug)]
pub struct WindowState {
    capacity: Capacity,
    votes: VecDeque<(Verdict, f64)>,
    weighted: bool,
    // integer tallies keep the unit-weight vote exact
    ones: usize,
    // running sums, only maintained for unbounded windows
    weight_total: f64,
    weight_ones: f64,
    frames_seen: u64,
}

impl WindowState {
    pub fn new(capacity: Capacity) -> Self {
        Self {
            capacity,
            votes: VecDeque::new(),
            weighted: false,
            ones: 0,
            weight_total: 0.0,
            weight_ones: 0.0,
            frames_seen: 0,
        }
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    /// Frames observed so far, absent ones included.
    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Number of verdicts currently voting.
    pub fn stored(&self) -> usize {
        self.votes.len()
    }

    /// Advances the window by one frame; `None` marks an absent object.
    pub fn step(
        &mut self,
        verdict: Option<Verdict>,
        weight: Option<f64>,
    ) -> Result<StreamVerdict, WindowError> {
        if let Some(w) = weight {
            if !(w.is_finite() && w > 0.0) {
                return Err(WindowError::Weight(w));
            }
        }
        self.frames_seen += 1;
        let Some(verdict) = verdict else {
            return Ok(StreamVerdict::Absent);
        };
        let w = weight.unwrap_or(1.0);
        self.weighted |= weight.is_some_and(|w| w != 1.0);
        self.push(verdict, w);
        if let Capacity::Frames(t) = self.capacity {
            while self.votes.len() > t + 1 {
                let (old, _) = self.votes.pop_front().expect("non-empty window");
                if old.is_adversarial() {
                    self.ones -= 1;
                }
            }
        }
        let s = self.vote();
        Ok(if s >= 0.5 {
            StreamVerdict::Adversarial { s }
        } else {
            StreamVerdict::Clean { s }
        })
    }

    fn push(&mut self, verdict: Verdict, w: f64) {
        self.votes.push_back((verdict, w));
        if verdict.is_adversarial() {
            self.ones += 1;
        }
        if self.capacity == Capacity::All {
            self.weight_total += w;
            if verdict.is_adversarial() {
                self.weight_ones += w;
            }
        }
    }

    fn vote(&self) -> f64 {
        if !self.weighted {
            return self.ones as f64 / self.votes.len() as f64;
        }
        let (ones, total) = match self.capacity {
            Capacity::All => (self.weight_ones, self.weight_total),
            Capacity::Frames(_) => self.votes.iter().fold((0.0, 0.0), |(o, t), (v, w)| {
                (if v.is_adversarial() { o + w } else { o }, t + w)
            }),
        };
        (ones / total).clamp(0.0, 1.0)
    }
}

/// Folds [`WindowState::step`] over a whole stream with unit weights.
pub fn replay(stream: &[Option<Verdict>], capacity: Capacity) -> Vec<StreamVerdict> {
    let mut state = WindowState::new(capacity);
    stream
        .iter()
        .map(|v| state.step(*v, None).expect("unit weights are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Verdict::{Adversarial as A, Clean as C};

    fn run(stream: &[Option<Verdict>], t: Capacity) -> Vec<StreamVerdict> {
        replay(stream, t)
    }

    #[test]
    fn window_of_two_past_frames() {
        let out = run(&[Some(A), Some(A), Some(C)], Capacity::Frames(2));
        assert_eq!(out[2], StreamVerdict::Adversarial { s: 2.0 / 3.0 });
    }

    #[test]
    fn tie_counts_as_adversarial() {
        let out = run(&[Some(A), Some(C)], Capacity::Frames(1));
        assert_eq!(out[1], StreamVerdict::Adversarial { s: 0.5 });
    }

    #[test]
    fn zero_capacity_is_the_single_image_detector() {
        let stream = [Some(A), Some(C), Some(C), Some(A)];
        let out = run(&stream, Capacity::Frames(0));
        for (v, sv) in stream.iter().zip(&out) {
            assert_eq!(sv.verdict(), *v);
            assert_eq!(sv.s(), Some(f64::from(v.unwrap().as_u8())));
        }
    }

    #[test]
    fn replay_examples() {
        let out = run(&[Some(A); 3], Capacity::All);
        assert!(out
            .iter()
            .all(|v| matches!(v, StreamVerdict::Adversarial { .. })));

        let out = run(&[Some(C), None, Some(C), Some(A)], Capacity::Frames(1));
        assert_eq!(
            out,
            vec![
                StreamVerdict::Clean { s: 0.0 },
                StreamVerdict::Absent,
                StreamVerdict::Clean { s: 0.0 },
                StreamVerdict::Adversarial { s: 0.5 },
            ]
        );
    }

    #[test]
    fn weights() {
        let mut w = WindowState::new(Capacity::Frames(2));
        w.step(Some(A), Some(1.0)).unwrap();
        w.step(Some(C), Some(3.0)).unwrap();
        assert_eq!(
            w.step(Some(A), Some(1.0)).unwrap(),
            StreamVerdict::Clean { s: 0.4 }
        );
        // the weight-3 clean vote leaves after two more frames
        w.step(Some(A), Some(1.0)).unwrap();
        assert_eq!(
            w.step(Some(A), Some(1.0)).unwrap(),
            StreamVerdict::Adversarial { s: 1.0 }
        );

        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                w.step(Some(A), Some(bad)),
                Err(WindowError::Weight(_))
            ));
        }
    }

    #[test]
    fn capacity_parsing() {
        assert_eq!("all".parse::<Capacity>().unwrap(), Capacity::All);
        assert_eq!("10".parse::<Capacity>().unwrap(), Capacity::Frames(10));
        assert!("-1".parse::<Capacity>().is_err());
        assert_eq!(Capacity::Frames(3).to_string(), "3");
    }
}
