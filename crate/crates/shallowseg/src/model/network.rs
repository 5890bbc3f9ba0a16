use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TensorId};
use crate::colorimetry::ImageRGB;
use crate::dataio;
use crate::metrics::Predictor;
use crate::pcs::LogitMap;
use crate::scalar::Scalar;

/// Activation applied to the upsampled deep features inside the attention
/// module. ReLU is the default; sigmoid is an experimental switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attention {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Square training resolution.
    pub input_size: usize,
    /// Channel widths of the three encoder blocks (shallow to deep); each
    /// block halves the spatial resolution.
    pub channels: [usize; 3],
    pub head_channels: usize,
    pub attention: Attention,
    /// With attention fusion off, the head reads the shallow block directly.
    pub use_sam: bool,
    /// Parameter-initialization seed.
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: [8, 16, 32],
            head_channels: 16,
            attention: Attention::Relu,
            use_sam: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.input_size < 8 {
            return Err("input_size must be at least 8".into());
        }
        if self.channels.iter().any(|&c| c == 0) || self.head_channels == 0 {
            return Err("channel widths must be positive".into());
        }
        Ok(())
    }
}

/// Named parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F: Scalar> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// The network: a config plus its parameter store. Parameters live outside
/// any tape; each forward inserts them as leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F: Scalar> {
    pub config: NetworkConfig,
    pub params: Vec<Param<F>>,
}

/// The shallow attention fusion: gate `f_s` with the rectified, upsampled
/// single-channel deep map `f_d`.
pub fn sam<F: Scalar>(
    tape: &mut Tape<F>,
    f_s: TensorId,
    f_d: TensorId,
    attention: Attention,
) -> TensorId {
    let ss = tape.shape(f_s).to_vec();
    let ds = tape.shape(f_d).to_vec();
    assert_eq!(ss.len(), 4, "sam: f_s must be NCHW");
    assert_eq!(ds.len(), 4, "sam: f_d must be NCHW");
    assert_eq!(ss[0], ds[0], "sam: batch-size mismatch");
    assert_eq!(ds[1], 1, "sam: attention map must have one channel");
    assert!(ds[2] <= ss[2] && ds[3] <= ss[3], "sam: f_d larger than f_s");
    let up = tape.upsample_bilinear(f_d, ss[2], ss[3]);
    let att = match attention {
        Attention::Relu => tape.relu(up),
        Attention::Sigmoid => tape.sigmoid(up),
    };
    tape.mul(f_s, att)
}

fn param_specs(cfg: &NetworkConfig) -> Vec<(String, Vec<usize>)> {
    let [c1, c2, c3] = cfg.channels;
    let hc = cfg.head_channels;
    let mut v = vec![
        ("enc1.conv1.w".into(), vec![c1, 3, 3, 3]),
        ("enc1.conv1.b".into(), vec![c1]),
        ("enc1.conv2.w".into(), vec![c1, c1, 3, 3]),
        ("enc1.conv2.b".into(), vec![c1]),
        ("enc2.conv1.w".into(), vec![c2, c1, 3, 3]),
        ("enc2.conv1.b".into(), vec![c2]),
        ("enc2.conv2.w".into(), vec![c2, c2, 3, 3]),
        ("enc2.conv2.b".into(), vec![c2]),
        ("enc3.conv1.w".into(), vec![c3, c2, 3, 3]),
        ("enc3.conv1.b".into(), vec![c3]),
        ("enc3.conv2.w".into(), vec![c3, c3, 3, 3]),
        ("enc3.conv2.b".into(), vec![c3]),
    ];
    if cfg.use_sam {
        v.push(("att.deep.w".into(), vec![1, c3, 1, 1]));
        v.push(("att.deep.b".into(), vec![1]));
        v.push(("att.mid.w".into(), vec![1, c2, 1, 1]));
        v.push(("att.mid.b".into(), vec![1]));
    }
    v.push(("head.conv.w".into(), vec![hc, c1, 3, 3]));
    v.push(("head.conv.b".into(), vec![hc]));
    v.push(("head.proj.w".into(), vec![1, hc, 1, 1]));
    v.push(("head.proj.b".into(), vec![1]));
    v
}

impl<F: Scalar> Network<F> {
    /// He-initialized network; deterministic in `config.seed`.
    pub fn new(config: NetworkConfig) -> Self {
        config.validate().expect("invalid network config");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if shape.len() == 1 {
                    // Biases start at zero; attention biases slightly
                    // positive so the gate is open at initialization.
                    let b0 = if name.starts_with("att.") { 0.5 } else { 0.0 };
                    vec![F::from_f64(b0); n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).unwrap();
                    (0..n).map(|_| F::from_f64(dist.sample(&mut rng))).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        Self { config, params }
    }

    pub fn param_index(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    /// Insert every parameter as a tape leaf.
    pub fn params_on_tape(&self, tape: &mut Tape<F>, requires_grad: bool) -> Vec<TensorId> {
        self.params
            .iter()
            .map(|p| tape.leaf(&p.shape, p.data.clone(), requires_grad))
            .collect()
    }

    /// Forward pass with externally supplied parameter leaves, in the order
    /// of `self.params`. Returns the logit map at the input resolution,
    /// shape N×1×H×W.
    pub fn forward_with_ids(
        &self,
        tape: &mut Tape<F>,
        x: TensorId,
        ids: &[TensorId],
    ) -> TensorId {
        let shape = tape.shape(x).to_vec();
        assert_eq!(shape.len(), 4, "input must be NCHW");
        assert_eq!(shape[1], 3, "input must have 3 channels");
        let (h, w) = (shape[2], shape[3]);
        let at = |name: &str| ids[self.param_index(name)];

        let block = |input: TensorId, prefix: &str, tape: &mut Tape<F>| {
            let c = tape.conv2d(input, at(&format!("{prefix}.conv1.w")), at(&format!("{prefix}.conv1.b")), 2, 1);
            let c = tape.relu(c);
            let c = tape.conv2d(c, at(&format!("{prefix}.conv2.w")), at(&format!("{prefix}.conv2.b")), 1, 1);
            tape.relu(c)
        };
        let b1 = block(x, "enc1", tape);
        let b2 = block(b1, "enc2", tape);
        let b3 = block(b2, "enc3", tape);

        let shallow = if self.config.use_sam {
            // Deepest block gates the middle one, the result gates the
            // shallowest.
            let a_deep = tape.conv2d(b3, at("att.deep.w"), at("att.deep.b"), 1, 0);
            let b2_gated = sam(tape, b2, a_deep, self.config.attention);
            let a_mid = tape.conv2d(b2_gated, at("att.mid.w"), at("att.mid.b"), 1, 0);
            sam(tape, b1, a_mid, self.config.attention)
        } else {
            b1
        };

        let hfeat = tape.conv2d(shallow, at("head.conv.w"), at("head.conv.b"), 1, 1);
        let hfeat = tape.relu(hfeat);
        let logit = tape.conv2d(hfeat, at("head.proj.w"), at("head.proj.b"), 1, 0);
        tape.upsample_bilinear(logit, h, w)
    }

    /// Forward on a fresh parameter snapshot; `train` controls whether the
    /// parameter leaves collect gradients.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        x: TensorId,
        train: bool,
    ) -> (TensorId, Vec<TensorId>) {
        let ids = self.params_on_tape(tape, train);
        let logits = self.forward_with_ids(tape, x, &ids);
        (logits, ids)
    }

    /// Inference on raw NCHW data; returns the flat logit map (N×1×H×W).
    pub fn infer_logits(&self, x: Vec<F>, n: usize, h: usize, w: usize) -> Vec<F> {
        let mut tape = Tape::new();
        let xid = tape.leaf(&[n, 3, h, w], x, false);
        let (logits, _) = self.forward_on_tape(&mut tape, xid, false);
        tape.data(logits).to_vec()
    }
}

/// Interleaved [0,1] RGB to a channels-first tensor buffer.
pub fn image_to_nchw<F: Scalar>(img: &ImageRGB) -> Vec<F> {
    let hw = img.pixels();
    let mut out = vec![F::zero(); 3 * hw];
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * hw + i] = F::from_f64(px[c]);
        }
    }
    out
}

impl<F: Scalar> Predictor for Network<F> {
    /// Resize to the configured square resolution, run the network, and
    /// resample the logit map back to the image's native size.
    fn predict_logits(&self, image: &ImageRGB) -> Result<LogitMap, String> {
        let s = self.config.input_size;
        let resized = dataio::resize_image(image, s, s);
        let x = image_to_nchw::<F>(&resized);
        let logits = self.infer_logits(x, 1, s, s);
        let logits_f64: Vec<f64> = logits.iter().map(|&v| Scalar::to_f64(v)).collect();
        let native = dataio::resize_plane(&logits_f64, s, s, image.height, image.width);
        Ok(LogitMap::new(image.height, image.width, native))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            input_size: 16,
            channels: [2, 3, 4],
            head_channels: 3,
            seed: 1,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn sam_all_ones_attention_is_identity() {
        let mut t = Tape::<f64>::new();
        let f_s = t.leaf(&[1, 2, 4, 4], (0..32).map(|i| i as f64 * 0.1 - 1.0).collect(), false);
        let f_d = t.leaf(&[1, 1, 4, 4], vec![1.0; 16], false);
        let out = sam(&mut t, f_s, f_d, Attention::Relu);
        assert_eq!(t.data(out), t.data(f_s));
    }

    #[test]
    fn sam_nonpositive_attention_zeroes_output() {
        let mut t = Tape::<f64>::new();
        let f_s = t.leaf(&[1, 2, 4, 4], vec![3.0; 32], false);
        let f_d = t.leaf(&[1, 1, 2, 2], vec![-1.0, -0.5, 0.0, -2.0], false);
        let out = sam(&mut t, f_s, f_d, Attention::Relu);
        assert!(t.data(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sam_hand_example() {
        // 1x1 deep value 2 against a 2x2 shallow block.
        let mut t = Tape::<f64>::new();
        let f_s = t.leaf(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let f_d = t.leaf(&[1, 1, 1, 1], vec![2.0], false);
        let out = sam(&mut t, f_s, f_d, Attention::Relu);
        assert_eq!(t.data(out), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    #[should_panic(expected = "batch-size mismatch")]
    fn sam_rejects_batch_mismatch() {
        let mut t = Tape::<f64>::new();
        let f_s = t.leaf(&[2, 1, 2, 2], vec![0.0; 8], false);
        let f_d = t.leaf(&[1, 1, 2, 2], vec![0.0; 4], false);
        sam(&mut t, f_s, f_d, Attention::Relu);
    }

    #[test]
    fn forward_output_shape() {
        let net = Network::<f64>::new(tiny_config());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Vec<f64> = (0..2 * 3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut tape = Tape::new();
        let xid = tape.leaf(&[2, 3, 16, 16], x, false);
        let (logits, _) = net.forward_on_tape(&mut tape, xid, false);
        assert_eq!(tape.shape(logits), &[2, 1, 16, 16]);
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let net = Network::<f64>::new(tiny_config());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..16 * 16).map(|_| f64::from(u8::from(rng.gen_bool(0.2)))).collect();
        let mut tape = Tape::new();
        let xid = tape.leaf(&[1, 3, 16, 16], x, false);
        let (logits, ids) = net.forward_on_tape(&mut tape, xid, true);
        let p = tape.sigmoid(logits);
        let loss = crate::model::loss_on_tape(&mut tape, p, &target, &crate::model::LossWeights::default());
        tape.backward(loss);
        for (pid, param) in ids.iter().zip(&net.params) {
            let g = tape.grad(*pid);
            assert!(g.iter().all(|v| v.is_finite()), "{}: non-finite grad", param.name);
            assert!(g.iter().any(|&v| v != 0.0), "{}: all-zero grad", param.name);
        }
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let cfg = tiny_config();
        let a = Network::<f64>::new(cfg.clone());
        let b = Network::<f64>::new(cfg);
        assert_eq!(a.params, b.params);
        let x: Vec<f64> = (0..3 * 16 * 16).map(|i| (i % 17) as f64 / 17.0).collect();
        let la = a.infer_logits(x.clone(), 1, 16, 16);
        let lb = b.infer_logits(x, 1, 16, 16);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&la), bits(&lb));
    }

    #[test]
    fn backbone_only_has_no_attention_params() {
        let net = Network::<f64>::new(NetworkConfig { use_sam: false, ..tiny_config() });
        assert!(net.params.iter().all(|p| !p.name.starts_with("att.")));
        let x: Vec<f64> = (0..3 * 16 * 16).map(|i| (i % 5) as f64 / 5.0).collect();
        let l = net.infer_logits(x, 1, 16, 16);
        assert_eq!(l.len(), 16 * 16);
    }

    #[test]
    fn predictor_matches_native_resolution() {
        let net = Network::<f64>::new(tiny_config());
        let img = ImageRGB::constant(20, 12, [0.4, 0.5, 0.6]);
        let m = net.predict_logits(&img).unwrap();
        assert_eq!((m.height, m.width), (12, 20));
        assert!(m.logits.iter().all(|v| v.is_finite()));
    }
}
