//! Runs a tabulated [`FiniteEP`] as a live environment, so small explicit
//! models can be simulated, traced, and rendered with the same episode loop
//! as the big environments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{intervention_set_of, FiniteEP};
use crate::ep::{AdmissibilityError, InterventionSet, ObservationSet, Tick, UtilityEvent, UtilityTag};
use crate::episode::EngagementProcess;
use crate::rng::{EpisodeStreams, Stream};

/// Tabulated EP plus what the episode loop needs: an initial distribution
/// and a horizon.
pub struct ExplicitEp {
    pub model: FiniteEP,
    pub init: Vec<f64>,
    pub horizon: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExplicitAnnotation {
    pub state: String,
}

impl ExplicitEp {
    pub fn new(model: FiniteEP, init: Option<Vec<f64>>, horizon: u32) -> Self {
        let n = model.n_states();
        let init = init.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        Self { model, init, horizon }
    }

    /// Index of the enumerated intervention set equal to `set`, if any.
    pub fn set_index(&self, set: &InterventionSet) -> Option<usize> {
        self.model.sets.iter().position(|members| {
            members.len() == set.len() && members.iter().all(|id| set.contains(id))
        })
    }
}

fn sample_row(row: &[f64], rng: &mut Stream) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    row.len() - 1
}

impl EngagementProcess for ExplicitEp {
    type State = usize;
    /// Payload: index of the observation outcome the event came from.
    type Obs = usize;
    type Annotation = ExplicitAnnotation;

    fn name(&self) -> &'static str {
        "explicit"
    }

    fn initial(&self, streams: &mut EpisodeStreams) -> usize {
        sample_row(&self.init, &mut streams.init)
    }

    fn horizon(&self) -> u32 {
        self.horizon
    }

    fn gamma_tick(&self) -> f64 {
        self.model.gamma
    }

    fn check_admissible(
        &self,
        state: &usize,
        set: &InterventionSet,
    ) -> Result<(), AdmissibilityError> {
        match self.set_index(set) {
            Some(a) if self.model.admissible[*state][a] => Ok(()),
            _ => {
                let id = set
                    .actions()
                    .first()
                    .map(|a| a.id.clone())
                    .unwrap_or_else(|| "{}".to_string());
                Err(AdmissibilityError::NotAdmissible(id))
            }
        }
    }

    fn admissible_sets(&self, state: &usize) -> Vec<InterventionSet> {
        (0..self.model.n_sets())
            .filter(|&a| self.model.admissible[*state][a])
            .map(|a| intervention_set_of(&self.model, a))
            .collect()
    }

    fn utility(&self, state: &usize, set: &InterventionSet, tick: Tick) -> Vec<UtilityEvent> {
        let a = self.set_index(set).expect("admissibility checked before utility");
        let v = self.model.u[*state][a];
        if v == 0.0 {
            Vec::new()
        } else {
            vec![UtilityEvent::new(v, tick, UtilityTag::Other)]
        }
    }

    fn transition(&self, state: &usize, set: &InterventionSet, streams: &mut EpisodeStreams) -> usize {
        let a = self.set_index(set).expect("admissibility checked before transition");
        sample_row(&self.model.f[*state][a], &mut streams.transition)
    }

    fn observe(&self, state: &usize, tick: Tick, streams: &mut EpisodeStreams) -> ObservationSet<usize> {
        let y = sample_row(&self.model.o[*state], &mut streams.observation);
        let mut out = ObservationSet::empty();
        for id in &self.model.obs_elems[y] {
            out.push(id.clone(), y, tick);
        }
        out
    }

    fn continuation(&self, state: &usize) -> InterventionSet {
        // The empty set when admissible, else the lowest admissible set
        // (option encodings force a specific continuation).
        let empty_ix = self.model.sets.iter().position(|s| s.is_empty());
        let a = match empty_ix {
            Some(a) if self.model.admissible[*state][a] => a,
            _ => (0..self.model.n_sets())
                .find(|&a| self.model.admissible[*state][a])
                .unwrap_or(0),
        };
        intervention_set_of(&self.model, a)
    }

    fn annotate(&self, state: &usize) -> ExplicitAnnotation {
        ExplicitAnnotation { state: self.model.state_labels[*state].clone() }
    }
}
