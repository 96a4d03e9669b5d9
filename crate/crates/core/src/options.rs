//! Temporally extended actions encoded back into a tick-level EP.
//!
//! The base state space is doubled with an "option active" flag. Initiating
//! the option is a new singleton intervention set, admissible only inside the
//! initiation set; while the flag is up only the continuation set is
//! admissible and the option's internal policy drives the transition kernel.
//! Observation outcomes keep arriving every tick on both halves.

use crate::belief::{FiniteEP, FiniteEpError};

#[derive(Debug, Clone)]
pub struct OptionSpec {
    pub name: String,
    /// States where the option may be initiated.
    pub initiation: Vec<usize>,
    /// Internal policy: base intervention-set index per base state.
    pub policy: Vec<usize>,
    /// Termination flag per base state, checked on the state the option
    /// lands in. A true flag hands control back.
    pub terminate: Vec<bool>,
    /// Index of the continuation (empty) set in the base EP.
    pub continuation: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptionError {
    #[error("internal policy covers {got} states, base has {expected}")]
    PolicyLength { got: usize, expected: usize },
    #[error("termination flags cover {got} states, base has {expected}")]
    TerminateLength { got: usize, expected: usize },
    #[error("internal policy refers to unknown set index {0}")]
    PolicySet(usize),
    #[error("initiation set refers to unknown state {0}")]
    InitiationState(usize),
    #[error("continuation index {0} is not an empty intervention set")]
    Continuation(usize),
    #[error(transparent)]
    Model(#[from] FiniteEpError),
}

/// Augments `base` with an active-option component.
///
/// Initiation is an announcement tick: the state is unchanged and the flag
/// goes up (unless the option terminates immediately), so an option whose
/// internal policy runs `k` ticks yields exactly `k` forced-continuation
/// ticks before control returns.
pub fn encode_option(base: &FiniteEP, opt: &OptionSpec) -> Result<FiniteEP, OptionError> {
    let n = base.n_states();
    let k = base.n_sets();
    let m = base.n_obs();
    if opt.policy.len() != n {
        return Err(OptionError::PolicyLength { got: opt.policy.len(), expected: n });
    }
    if opt.terminate.len() != n {
        return Err(OptionError::TerminateLength { got: opt.terminate.len(), expected: n });
    }
    if let Some(&bad) = opt.policy.iter().find(|&&p| p >= k) {
        return Err(OptionError::PolicySet(bad));
    }
    if let Some(&bad) = opt.initiation.iter().find(|&&s| s >= n) {
        return Err(OptionError::InitiationState(bad));
    }
    if opt.continuation >= k || !base.sets[opt.continuation].is_empty() {
        return Err(OptionError::Continuation(opt.continuation));
    }

    let mut state_labels = base.state_labels.clone();
    state_labels.extend(
        base.state_labels
            .iter()
            .map(|s| format!("{s}+{}", opt.name)),
    );
    let mut sets = base.sets.clone();
    sets.push(vec![format!("start_{}", opt.name)]);

    // Row builder: where the option sends a base state for one internal tick,
    // splitting each successor between its terminated and active copies.
    let option_row = |s: usize| -> Vec<f64> {
        let mut row = vec![0.0; 2 * n];
        for (sp, &p) in base.f[s][opt.policy[s]].iter().enumerate() {
            if opt.terminate[sp] {
                row[sp] += p;
            } else {
                row[n + sp] += p;
            }
        }
        row
    };

    let mut f = Vec::with_capacity(2 * n);
    let mut u = Vec::with_capacity(2 * n);
    let mut o = Vec::with_capacity(2 * n);
    let mut admissible = Vec::with_capacity(2 * n);

    for s in 0..n {
        let mut rows: Vec<Vec<f64>> = base.f[s]
            .iter()
            .map(|row| {
                let mut wide = row.clone();
                wide.extend(std::iter::repeat(0.0).take(n));
                wide
            })
            .collect();
        let mut initiate_row = vec![0.0; 2 * n];
        initiate_row[if opt.terminate[s] { s } else { n + s }] = 1.0;
        rows.push(initiate_row);
        f.push(rows);

        let mut u_row = base.u[s].clone();
        u_row.push(0.0);
        u.push(u_row);

        o.push(base.o[s].clone());

        let mut adm_row = base.admissible[s].clone();
        adm_row.push(opt.initiation.contains(&s));
        admissible.push(adm_row);
    }

    for s in 0..n {
        let internal = option_row(s);
        let mut rows = vec![vec![0.0; 2 * n]; k + 1];
        for (a, row) in rows.iter_mut().enumerate() {
            // Only the continuation row is reachable; the rest mirror it so
            // the kernel stays a valid stochastic matrix.
            let _ = a;
            row.copy_from_slice(&internal);
        }
        f.push(rows);

        let mut u_row = vec![0.0; k + 1];
        u_row[opt.continuation] = base.u[s][opt.policy[s]];
        u.push(u_row);

        o.push(base.o[s].clone());

        let mut adm_row = vec![false; k + 1];
        adm_row[opt.continuation] = true;
        admissible.push(adm_row);
    }

    debug_assert_eq!(o.len(), 2 * n);
    debug_assert!(o.iter().all(|row| row.len() == m));

    Ok(FiniteEP::with_admissibility(
        state_labels,
        sets,
        base.obs_elems.clone(),
        f,
        o,
        u,
        base.gamma,
        admissible,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::FiniteEP;

    /// Deterministic 4-chain; set 0 = {}, set 1 = {step} moves right.
    fn chain4() -> FiniteEP {
        let n = 4;
        let mut f = Vec::new();
        for s in 0..n {
            let mut stay = vec![0.0; n];
            stay[s] = 1.0;
            let mut step = vec![0.0; n];
            step[(s + 1).min(n - 1)] = 1.0;
            f.push(vec![stay, step]);
        }
        FiniteEP::new(
            (0..n).map(|s| format!("s{s}")).collect(),
            vec![vec![], vec!["step".into()]],
            vec![vec![], vec!["tock".into()]],
            f,
            vec![vec![0.5, 0.5]; n],
            vec![vec![0.0, 1.0]; n],
            0.9,
        )
        .unwrap()
    }

    fn walk_to_end() -> OptionSpec {
        OptionSpec {
            name: "walk".into(),
            initiation: vec![0],
            policy: vec![1, 1, 1, 1],
            terminate: vec![false, false, false, true],
            continuation: 0,
        }
    }

    #[test]
    fn active_states_admit_only_continuation() {
        let enc = encode_option(&chain4(), &walk_to_end()).unwrap();
        assert_eq!(enc.n_states(), 8);
        assert_eq!(enc.n_sets(), 3);
        for s in 4..8 {
            assert_eq!(enc.admissible[s], vec![true, false, false]);
        }
        // Initiation only inside the initiation set.
        assert!(enc.admissible[0][2]);
        assert!(!enc.admissible[1][2]);
    }

    #[test]
    fn three_tick_option_forces_three_continuation_ticks() {
        let enc = encode_option(&chain4(), &walk_to_end()).unwrap();
        // Initiate at s0: flag up, state unchanged.
        let mut state = 0usize;
        let arg = |f: &[f64]| f.iter().position(|&p| p == 1.0).unwrap();
        state = arg(&enc.f[state][2]);
        assert_eq!(state, 4);
        let mut forced = 0;
        while enc.admissible[state] == vec![true, false, false] {
            forced += 1;
            state = arg(&enc.f[state][0]);
        }
        assert_eq!(forced, 3);
        assert_eq!(state, 3);
        // Control is back: base admissibility again.
        assert_eq!(enc.admissible[state], vec![true, true, false]);
    }

    #[test]
    fn option_utility_comes_from_internal_policy() {
        let enc = encode_option(&chain4(), &walk_to_end()).unwrap();
        // Active copies charge the base utility of the internal action.
        for s in 4..8 {
            assert_eq!(enc.u[s][0], 1.0);
        }
        // The announcement tick itself charges nothing.
        assert_eq!(enc.u[0][2], 0.0);
    }

    #[test]
    fn immediate_termination_keeps_base_admissibility() {
        let mut opt = walk_to_end();
        opt.terminate = vec![true; 4];
        opt.initiation = vec![0, 1, 2, 3];
        let enc = encode_option(&chain4(), &opt).unwrap();
        // Base sets keep their base admissibility on every inactive state,
        // and initiating never raises the flag.
        for s in 0..4 {
            assert_eq!(&enc.admissible[s][..2], &[true, true]);
            assert_eq!(enc.f[s][2][s], 1.0);
        }
    }

    #[test]
    fn observations_unchanged_on_active_copies() {
        let enc = encode_option(&chain4(), &walk_to_end()).unwrap();
        for s in 0..4 {
            assert_eq!(enc.o[s], enc.o[s + 4]);
        }
    }

    #[test]
    fn bad_continuation_index_rejected() {
        let mut opt = walk_to_end();
        opt.continuation = 1;
        let err = encode_option(&chain4(), &opt).unwrap_err();
        assert_eq!(err, OptionError::Continuation(1));
    }
}
