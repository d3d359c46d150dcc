//! Concrete testing of a structure against the progress semantics: every
//! concrete state described by the source must, running inside the label
//! set, reach in at least one step a state described by some target.

use std::ops::Range;

use thiserror::Error;

use super::{Kernel, ProgressStructure};
use crate::il::{run_in_fragment, RunError, State};
use crate::sym::{interp_store, loose_matches, sample_minimal_interpretation, Interpretation, SymState};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("seed {seed}: {reason}")]
pub struct SoundnessViolation {
    pub seed: u64,
    pub interpretation: Interpretation,
    pub start: Option<State>,
    pub reason: String,
}

/// Sample one interpretation of the source per seed and run it. Returns the
/// number of seeds for which the source path was satisfiable.
pub fn check_soundness(
    k: &Kernel,
    ps: &ProgressStructure,
    seeds: Range<u64>,
    max_steps: usize,
) -> Result<usize, SoundnessViolation> {
    let solver = k.solver();
    let mut tested = 0;
    for seed in seeds {
        let fail = |h: &Interpretation, start: Option<&State>, reason: String| SoundnessViolation {
            seed,
            interpretation: h.clone(),
            start: start.cloned(),
            reason,
        };
        let empty = Interpretation::new();
        let h = match sample_minimal_interpretation(ps.source(), seed, solver) {
            Ok(Some(h)) => h,
            Ok(None) => continue,
            Err(e) => return Err(fail(&empty, None, e.to_string())),
        };
        let SymState::Running { pc, store, .. } = ps.source() else {
            // A failed state has no successors, so only an empty claim is
            // vacuous; anything else is left untested.
            continue;
        };
        let env = interp_store(&h, store).map_err(|e| fail(&h, None, e.to_string()))?;
        let start = State::running(*pc, env);
        tested += 1;
        let (trace, truncated) = match run_in_fragment(k.program(), &start, ps.labels(), max_steps) {
            Ok(t) => (t, false),
            Err(RunError::Truncated { trace, .. }) => (trace, true),
            Err(RunError::NotInFragment) => {
                return Err(fail(&h, Some(&start), "source label is outside the fragment".into()))
            }
        };
        let mut found = false;
        'search: for c in &trace[1..] {
            for t in ps.targets() {
                match loose_matches(t, &h, c, solver) {
                    Ok(true) => {
                        found = true;
                        break 'search;
                    }
                    Ok(false) => {}
                    Err(e) => return Err(fail(&h, Some(&start), e.to_string())),
                }
            }
        }
        if !found {
            let reason = if truncated {
                format!("no target reached within {max_steps} steps")
            } else {
                format!("run left the fragment at {:?} without matching a target", trace.last())
            };
            return Err(fail(&h, Some(&start), reason));
        }
    }
    Ok(tested)
}
