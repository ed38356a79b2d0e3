pub mod augment;
pub mod jitter;
pub mod rollout;
pub mod sched;
pub mod spectral;
pub mod synth;

use crate::{Failure, Outcome};

/// Parses `a,b,c` into numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Outcome<Vec<T>> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Failure::Usage(format!("bad {what} entry `{t}` in `{s}`"))))
        .collect()
}
