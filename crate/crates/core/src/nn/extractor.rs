//! Feature extractors that map an observation window onto a fixed-width
//! vector, so the policy heads never care which architecture sits below
//! them. Three interchangeable designs are provided: a convolutional stack
//! over the whole window, a recurrent pass over per-interval frames, and a
//! single-head attention block with a learned summary token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::state::{TrafficState, K_FRAMES};

use super::params::ParamStore;
use super::tape::{Tape, ValueId};
use super::tensor::Tensor;

pub const MOVEMENT_ROWS: usize = 8;
pub const ROW_FEATURES: usize = 8;

/// Width settings for the extractor and head layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// Channels produced by each convolution stage.
    pub channels: usize,
    /// Recurrent state width.
    pub hidden: usize,
    /// Width of the extracted feature vector shared by all extractors.
    pub feature: usize,
    /// Query/key width in the attention extractor.
    pub attn_dim: usize,
    /// Hidden width inside the actor and critic heads.
    pub head_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            channels: 32,
            hidden: 32,
            feature: 64,
            attn_dim: 32,
            head_hidden: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    Cnn,
    Rnn,
    Transformer,
}

impl ExtractorKind {
    pub const ALL: [ExtractorKind; 3] = [
        ExtractorKind::Cnn,
        ExtractorKind::Rnn,
        ExtractorKind::Transformer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExtractorKind::Cnn => "cnn",
            ExtractorKind::Rnn => "rnn",
            ExtractorKind::Transformer => "transformer",
        }
    }
}

impl std::fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<ExtractorKind, String> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(ExtractorKind::Cnn),
            "rnn" => Ok(ExtractorKind::Rnn),
            "transformer" | "attn" => Ok(ExtractorKind::Transformer),
            other => Err(format!("unknown extractor '{other}' (expected cnn, rnn or transformer)")),
        }
    }
}

/// Lists extractor plus head parameters in their canonical creation order.
fn param_shapes(kind: ExtractorKind, cfg: &NetConfig) -> Vec<(String, usize, usize)> {
    let ch = cfg.channels;
    let mut shapes: Vec<(String, usize, usize)> = Vec::new();
    match kind {
        ExtractorKind::Cnn => {
            shapes.push(("extractor.conv_mv.weight".into(), K_FRAMES * ROW_FEATURES, ch));
            shapes.push(("extractor.conv_jn.weight".into(), MOVEMENT_ROWS * ch, ch));
            shapes.push(("extractor.proj.weight".into(), ch, cfg.feature));
            shapes.push(("extractor.proj.bias".into(), 1, cfg.feature));
        }
        ExtractorKind::Rnn => {
            shapes.push(("extractor.frame_conv1.weight".into(), ROW_FEATURES, ch));
            shapes.push(("extractor.frame_conv2.weight".into(), MOVEMENT_ROWS * ch, ch));
            shapes.push(("extractor.rnn.wx".into(), ch, cfg.hidden));
            shapes.push(("extractor.rnn.wh".into(), cfg.hidden, cfg.hidden));
            shapes.push(("extractor.rnn.bias".into(), 1, cfg.hidden));
            shapes.push(("extractor.out.weight".into(), cfg.hidden, cfg.feature));
            shapes.push(("extractor.out.bias".into(), 1, cfg.feature));
        }
        ExtractorKind::Transformer => {
            shapes.push(("extractor.frame_conv1.weight".into(), ROW_FEATURES, ch));
            shapes.push(("extractor.frame_conv2.weight".into(), MOVEMENT_ROWS * ch, ch));
            shapes.push(("extractor.attn.class_token".into(), 1, ch));
            shapes.push(("extractor.attn.wq".into(), ch, cfg.attn_dim));
            shapes.push(("extractor.attn.wk".into(), ch, cfg.attn_dim));
            shapes.push(("extractor.attn.wv".into(), ch, cfg.feature));
        }
    }
    for head in ["actor", "critic"] {
        let out = if head == "actor" { 2 } else { 1 };
        shapes.push((format!("{head}.fc1.weight"), cfg.feature, cfg.head_hidden));
        shapes.push((format!("{head}.fc1.bias"), 1, cfg.head_hidden));
        shapes.push((format!("{head}.fc2.weight"), cfg.head_hidden, out));
        shapes.push((format!("{head}.fc2.bias"), 1, out));
    }
    shapes
}

/// Builds a freshly initialised parameter store: weights drawn from a
/// zero-mean Gaussian with standard deviation `1/sqrt(fan_in)`, biases zero.
pub fn init_params(kind: ExtractorKind, cfg: &NetConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, rows, cols) in param_shapes(kind, cfg) {
        let tensor = if name.ends_with(".bias") {
            Tensor::zeros(rows, cols)
        } else {
            let dist = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).unwrap();
            let data = (0..rows * cols).map(|_| dist.sample(&mut rng)).collect();
            Tensor::from_vec(rows, cols, data)
        };
        store.insert(name, tensor, true);
    }
    store
}

/// Lays the window out as one matrix: row per movement, columns grouped
/// frame by frame so column `k * 8 + f` holds feature `f` of frame `k`.
pub fn window_input(state: &TrafficState) -> Tensor {
    Tensor::from_fn(MOVEMENT_ROWS, K_FRAMES * ROW_FEATURES, |row, col| {
        state.frames[col / ROW_FEATURES].rows[row][col % ROW_FEATURES]
    })
}

/// Splits the window into one 8x8 matrix per observation frame, oldest first.
pub fn frame_inputs(state: &TrafficState) -> Vec<Tensor> {
    (0..K_FRAMES)
        .map(|k| Tensor::from_fn(MOVEMENT_ROWS, ROW_FEATURES, |i, j| state.frames[k].rows[i][j]))
        .collect()
}

/// Per-frame code shared by the recurrent and attention extractors: two
/// convolution stages collapse one frame to a single channel row.
fn frame_code(tape: &mut Tape, cfg: &NetConfig, frame: ValueId, w1: ValueId, w2: ValueId) -> ValueId {
    let c1 = tape.matmul(frame, w1);
    let flat = tape.reshape(c1, 1, MOVEMENT_ROWS * cfg.channels);
    let c2 = tape.matmul(flat, w2);
    tape.relu(c2)
}

/// Records the feature forward pass for `state`, returning a `1 x feature`
/// value. Parameters are read from the tape's store by name.
pub fn features(tape: &mut Tape, kind: ExtractorKind, cfg: &NetConfig, state: &TrafficState) -> ValueId {
    match kind {
        ExtractorKind::Cnn => {
            let input = tape.constant(window_input(state));
            let w_mv = tape.param("extractor.conv_mv.weight");
            let w_jn = tape.param("extractor.conv_jn.weight");
            let w_proj = tape.param("extractor.proj.weight");
            let b_proj = tape.param("extractor.proj.bias");
            let c1 = tape.matmul(input, w_mv);
            let flat = tape.reshape(c1, 1, MOVEMENT_ROWS * cfg.channels);
            let c2 = tape.matmul(flat, w_jn);
            let act = tape.relu(c2);
            let proj = tape.matmul(act, w_proj);
            tape.add_bias(proj, b_proj)
        }
        ExtractorKind::Rnn => {
            let w1 = tape.param("extractor.frame_conv1.weight");
            let w2 = tape.param("extractor.frame_conv2.weight");
            let wx = tape.param("extractor.rnn.wx");
            let wh = tape.param("extractor.rnn.wh");
            let bias = tape.param("extractor.rnn.bias");
            let w_out = tape.param("extractor.out.weight");
            let b_out = tape.param("extractor.out.bias");
            let mut h = tape.constant(Tensor::zeros(1, cfg.hidden));
            for frame in frame_inputs(state) {
                let f = tape.constant(frame);
                let code = frame_code(tape, cfg, f, w1, w2);
                let xw = tape.matmul(code, wx);
                let hw = tape.matmul(h, wh);
                let pre = tape.add(xw, hw);
                let pre_b = tape.add(pre, bias);
                h = tape.tanh(pre_b);
            }
            let out = tape.matmul(h, w_out);
            tape.add_bias(out, b_out)
        }
        ExtractorKind::Transformer => {
            let w1 = tape.param("extractor.frame_conv1.weight");
            let w2 = tape.param("extractor.frame_conv2.weight");
            let class = tape.param("extractor.attn.class_token");
            let wq = tape.param("extractor.attn.wq");
            let wk = tape.param("extractor.attn.wk");
            let wv = tape.param("extractor.attn.wv");
            let mut tokens = vec![class];
            for frame in frame_inputs(state) {
                let f = tape.constant(frame);
                tokens.push(frame_code(tape, cfg, f, w1, w2));
            }
            let z = tape.concat_rows(&tokens);
            let q = tape.matmul(z, wq);
            let k = tape.matmul(z, wk);
            let v = tape.matmul(z, wv);
            let kt = tape.transpose(k);
            let raw = tape.matmul(q, kt);
            let scores = tape.scale(raw, 1.0 / (cfg.attn_dim as f64).sqrt());
            let weights = tape.row_softmax(scores);
            let mixed = tape.matmul(weights, v);
            tape.slice_row(mixed, 0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::JunctionMatrix;

    fn probe_state() -> TrafficState {
        let mut frames = [JunctionMatrix::zeroed(); K_FRAMES];
        for (k, frame) in frames.iter_mut().enumerate() {
            for r in 0..MOVEMENT_ROWS {
                for f in 0..ROW_FEATURES {
                    frame.rows[r][f] = ((k * 64 + r * 8 + f) as f64 * 0.37).sin() * 0.5;
                }
            }
        }
        TrafficState::from_frames(frames)
    }

    #[test]
    fn window_input_is_frame_major() {
        let state = probe_state();
        let m = window_input(&state);
        assert_eq!(m.shape(), (8, 64));
        assert_eq!(m.at(3, 2 * 8 + 5), state.frames[2].rows[3][5]);
        assert_eq!(m.at(7, 7 * 8 + 7), state.frames[7].rows[7][7]);
    }

    #[test]
    fn every_extractor_emits_the_shared_feature_width() {
        let cfg = NetConfig {
            channels: 6,
            hidden: 5,
            feature: 11,
            attn_dim: 4,
            head_hidden: 3,
        };
        let state = probe_state();
        for kind in ExtractorKind::ALL {
            let store = init_params(kind, &cfg, 9);
            let mut tape = Tape::new(&store);
            let out = features(&mut tape, kind, &cfg, &state);
            assert_eq!(tape.value(out).shape(), (1, cfg.feature), "{kind}");
            assert!(tape.value(out).data.iter().all(|v| v.is_finite()), "{kind}");
        }
    }

    #[test]
    fn init_is_seed_deterministic_and_biases_are_zero() {
        let cfg = NetConfig::default();
        for kind in ExtractorKind::ALL {
            let a = init_params(kind, &cfg, 42);
            let b = init_params(kind, &cfg, 42);
            let c = init_params(kind, &cfg, 43);
            assert_eq!(a.fingerprint_all(), b.fingerprint_all());
            assert_ne!(a.fingerprint_all(), c.fingerprint_all());
            for (name, tensor, trainable) in a.iter() {
                assert!(trainable);
                if name.ends_with(".bias") {
                    assert!(tensor.data.iter().all(|&v| v == 0.0), "{name}");
                } else {
                    assert!(tensor.data.iter().any(|&v| v != 0.0), "{name}");
                }
            }
        }
    }

    #[test]
    fn head_parameters_are_shared_across_extractors() {
        let cfg = NetConfig::default();
        let names = |kind| {
            init_params(kind, &cfg, 0)
                .iter()
                .map(|(n, _, _)| n.to_string())
                .filter(|n| n.starts_with("actor.") || n.starts_with("critic."))
                .collect::<Vec<_>>()
        };
        let cnn = names(ExtractorKind::Cnn);
        assert_eq!(cnn, names(ExtractorKind::Rnn));
        assert_eq!(cnn, names(ExtractorKind::Transformer));
        assert_eq!(cnn.len(), 8);
        let store = init_params(ExtractorKind::Cnn, &cfg, 0);
        assert_eq!(store.get("actor.fc2.weight").shape(), (cfg.head_hidden, 2));
        assert_eq!(store.get("critic.fc2.weight").shape(), (cfg.head_hidden, 1));
    }

    #[test]
    fn weight_scale_follows_fan_in() {
        let cfg = NetConfig::default();
        let store = init_params(ExtractorKind::Cnn, &cfg, 7);
        let w = store.get("extractor.conv_mv.weight");
        let n = w.len() as f64;
        let mean = w.data.iter().sum::<f64>() / n;
        let var = w.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expect = 1.0 / (K_FRAMES * ROW_FEATURES) as f64;
        assert!((var - expect).abs() < expect * 0.35, "var {var} vs {expect}");
    }
}
