//! Actor-critic policy over a shared feature extractor.
//!
//! Both heads read the same extracted feature vector. The actor emits one
//! logit per signal action (keep, change) and the critic a scalar state
//! value. Dense layers consult the adapter table, so a low-rank adapter can
//! reroute any head weight without touching the frozen base tensor.

use std::collections::BTreeMap;

use rand::Rng;

use crate::state::TrafficState;

use super::extractor::{features, init_params, ExtractorKind, NetConfig};
use super::params::ParamStore;
use super::tape::{Tape, ValueId};

/// Low-rank adapter attached to one weight matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdapterSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl AdapterSpec {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Graph handles for one state evaluation.
pub struct PolicyNodes {
    pub logits: ValueId,
    pub log_probs: ValueId,
    pub value: ValueId,
}

/// Plain-number view of a single forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub logits: [f64; 2],
    pub log_probs: [f64; 2],
    pub value: f64,
}

impl Evaluation {
    pub fn probs(&self) -> [f64; 2] {
        [self.log_probs[0].exp(), self.log_probs[1].exp()]
    }
}

#[derive(Clone)]
pub struct Policy {
    pub kind: ExtractorKind,
    pub cfg: NetConfig,
    pub store: ParamStore,
    pub adapters: BTreeMap<String, AdapterSpec>,
}

impl Policy {
    pub fn new(kind: ExtractorKind, cfg: NetConfig, seed: u64) -> Policy {
        Policy {
            kind,
            cfg,
            store: init_params(kind, &cfg, seed),
            adapters: BTreeMap::new(),
        }
    }

    pub fn from_parts(
        kind: ExtractorKind,
        cfg: NetConfig,
        store: ParamStore,
        adapters: BTreeMap<String, AdapterSpec>,
    ) -> Policy {
        Policy {
            kind,
            cfg,
            store,
            adapters,
        }
    }

    /// Dense layer `x W + b`, routed through the low-rank adapter when one
    /// is registered for this weight.
    fn dense<'s>(&'s self, tape: &mut Tape<'s>, x: ValueId, layer: &str) -> ValueId {
        let weight_name = format!("{layer}.weight");
        let w = tape.param(&weight_name);
        let mut y = tape.matmul(x, w);
        if let Some(spec) = self.adapters.get(&weight_name) {
            let b = tape.param(&format!("{weight_name}.lora_b"));
            let a = tape.param(&format!("{weight_name}.lora_a"));
            let down = tape.matmul(x, b);
            let up = tape.matmul(down, a);
            let scaled = tape.scale(up, spec.scaling());
            y = tape.add(y, scaled);
        }
        let bias = tape.param(&format!("{layer}.bias"));
        tape.add_bias(y, bias)
    }

    fn head<'s>(&'s self, tape: &mut Tape<'s>, feat: ValueId, name: &str) -> ValueId {
        let h = self.dense(tape, feat, &format!("{name}.fc1"));
        let act = tape.relu(h);
        self.dense(tape, act, &format!("{name}.fc2"))
    }

    /// Records the full forward pass and returns handles to logits,
    /// action log-probabilities and the critic value.
    pub fn forward<'s>(&'s self, tape: &mut Tape<'s>, state: &TrafficState) -> PolicyNodes {
        let feat = features(tape, self.kind, &self.cfg, state);
        let logits = self.head(tape, feat, "actor");
        let log_probs = tape.row_log_softmax(logits);
        let value = self.head(tape, feat, "critic");
        PolicyNodes {
            logits,
            log_probs,
            value,
        }
    }

    pub fn evaluate(&self, state: &TrafficState) -> Evaluation {
        let mut tape = Tape::new(&self.store);
        let nodes = self.forward(&mut tape, state);
        let logits = tape.value(nodes.logits);
        let log_probs = tape.value(nodes.log_probs);
        Evaluation {
            logits: [logits.at(0, 0), logits.at(0, 1)],
            log_probs: [log_probs.at(0, 0), log_probs.at(0, 1)],
            value: tape.value(nodes.value).at(0, 0),
        }
    }

    /// Draws an action from the current action distribution.
    pub fn sample_action(&self, state: &TrafficState, rng: &mut impl Rng) -> (usize, Evaluation) {
        let eval = self.evaluate(state);
        let action = if rng.gen::<f64>() < eval.probs()[0] { 0 } else { 1 };
        (action, eval)
    }

    /// Deterministic action: highest logit, keep on ties.
    pub fn greedy_action(&self, state: &TrafficState) -> usize {
        let eval = self.evaluate(state);
        usize::from(eval.logits[1] > eval.logits[0])
    }
}
