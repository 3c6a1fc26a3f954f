//! Latent design space: a variational autoencoder over genome token
//! sequences.
//!
//! Genomes are short categorical sequences, so the model is small and fully
//! dense: one-hot tokens in, per-slot softmax logits out, a diagonal
//! gaussian bottleneck in between. The math is written out by hand, forward
//! and reverse, so every gradient can be checked against finite differences.
//! Training is deterministic for a fixed seed regardless of thread count:
//! minibatch gradients are summed over fixed-size chunks in sample order.
//!
//! The model works in f64 end to end; model files store raw f64 bits, so a
//! scalar-generic network would buy nothing through that boundary.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};

use crate::geometry::{self, ModuleGeometry};
use crate::morphology::{
    validate_tree, ConfigTree, Connection, DockId, GenomeSeq, MalformedError, DOCKS_PER_MODULE,
    GENOME_LEN, MAX_CONNECTIONS, ORIENTATIONS,
};

/// Vocabulary width of the four token kinds in a connection group: parent,
/// parent dock, child dock, orientation. Each includes its NULL sentinel.
pub const SLOT_VOCAB: [usize; 4] = [6, DOCKS_PER_MODULE + 1, DOCKS_PER_MODULE + 1, ORIENTATIONS + 1];
/// One-hot width of a connection group.
pub const GROUP_WIDTH: usize = SLOT_VOCAB[0] + SLOT_VOCAB[1] + SLOT_VOCAB[2] + SLOT_VOCAB[3];
/// One-hot width of a full genome.
pub const ONE_HOT_LEN: usize = MAX_CONNECTIONS * GROUP_WIDTH;
/// Default latent width.
pub const LATENT_DIM: usize = 8;

/// Start offset and width of every token slot in the one-hot layout.
pub fn slot_ranges() -> [(usize, usize); GENOME_LEN] {
    let mut out = [(0usize, 0usize); GENOME_LEN];
    for group in 0..MAX_CONNECTIONS {
        let mut offset = group * GROUP_WIDTH;
        for (field, &width) in SLOT_VOCAB.iter().enumerate() {
            out[4 * group + field] = (offset, width);
            offset += width;
        }
    }
    out
}

/// Dense one-hot encoding of a genome.
pub fn one_hot(seq: &GenomeSeq) -> Vec<f64> {
    let mut x = vec![0.0; ONE_HOT_LEN];
    for (slot, &(start, width)) in slot_ranges().iter().enumerate() {
        let token = seq.tokens()[slot] as usize;
        debug_assert!(token < width, "token {token} exceeds slot width {width}");
        x[start + token] = 1.0;
    }
    x
}

/// Per-slot argmax decode of logits (or any score vector) back to tokens.
pub fn argmax_tokens(logits: &[f64]) -> GenomeSeq {
    assert_eq!(logits.len(), ONE_HOT_LEN);
    let mut tokens = [0u16; GENOME_LEN];
    for (slot, &(start, width)) in slot_ranges().iter().enumerate() {
        let mut best = 0;
        for k in 1..width {
            if logits[start + k] > logits[start + best] {
                best = k;
            }
        }
        tokens[slot] = best as u16;
    }
    GenomeSeq(tokens)
}

/// Outcome of decoding a latent point to a physical design.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeVerdict {
    Valid(ConfigTree),
    /// Tokens do not parse as a tree.
    Malformed(MalformedError),
    /// Tree parses but the assembly intersects itself.
    SelfColliding,
}

/// Parses tokens and checks the assembly geometry.
pub fn decode_verdict(seq: &GenomeSeq, geom: &ModuleGeometry<f64>) -> DecodeVerdict {
    let tree = match ConfigTree::from_genome_structural(seq) {
        Ok(t) => t,
        Err(e) => return DecodeVerdict::Malformed(e),
    };
    for c in tree.connections() {
        if geometry::interference_forbidden(geom, c.parent_dock, c.child_dock, c.orientation) {
            return DecodeVerdict::SelfColliding;
        }
    }
    match validate_tree(&tree, geom) {
        Ok(()) => DecodeVerdict::Valid(tree),
        Err(_) => DecodeVerdict::SelfColliding,
    }
}

/// Every buildable two-module genome: all single-connection designs that
/// pass the interference rule and neutral-pose overlap check.
pub fn two_module_dataset(geom: &ModuleGeometry<f64>) -> Vec<GenomeSeq> {
    let mut out = Vec::new();
    for pd in 0..DOCKS_PER_MODULE as u8 {
        for cd in 0..DOCKS_PER_MODULE as u8 {
            for o in 0..ORIENTATIONS as u8 {
                let c = Connection {
                    parent: 0,
                    parent_dock: DockId::new(pd).expect("dock in range"),
                    child_dock: DockId::new(cd).expect("dock in range"),
                    orientation: o,
                };
                if geometry::interference_forbidden(geom, c.parent_dock, c.child_dock, o) {
                    continue;
                }
                let tree = ConfigTree::new(vec![c]).expect("single connection is structural");
                if validate_tree(&tree, geom).is_ok() {
                    out.push(tree.to_genome());
                }
            }
        }
    }
    out
}

/// Deterministic train/holdout split: every fifth sequence is held out.
pub fn holdout_split(data: &[GenomeSeq]) -> (Vec<GenomeSeq>, Vec<GenomeSeq>) {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (i, s) in data.iter().enumerate() {
        if i % 5 == 0 {
            holdout.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, holdout)
}

// ---------------------------------------------------------------------------
// Network.

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// Row-major `out_dim x in_dim`.
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Dense {
    fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.gen_range(-s..s)).collect();
        Self { w, b: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for j in 0..self.out_dim {
            let row = &self.w[j * self.in_dim..(j + 1) * self.in_dim];
            let mut acc = self.b[j];
            for (wk, xk) in row.iter().zip(x) {
                acc += wk * xk;
            }
            out.push(acc);
        }
    }
}

/// Dense stack with tanh between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    /// Post-activation values per layer; `acts[0]` is the input.
    fn forward_cache(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(acts.last().expect("nonempty"), &mut out);
            if i < last {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates parameter gradients for `d_out` (gradient at the linear
    /// output) into `grads` and returns the gradient at the input.
    fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grads: &mut [LayerGrad]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut d = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (dj, aj) in d.iter_mut().zip(&acts[i + 1]) {
                    *dj *= 1.0 - aj * aj;
                }
            }
            let layer = &self.layers[i];
            let g = &mut grads[i];
            let a_prev = &acts[i];
            for j in 0..layer.out_dim {
                g.b[j] += d[j];
                let row = &mut g.w[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (gw, ak) in row.iter_mut().zip(a_prev) {
                    *gw += d[j] * ak;
                }
            }
            let mut d_in = vec![0.0; layer.in_dim];
            for j in 0..layer.out_dim {
                let row = &layer.w[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (di, wk) in d_in.iter_mut().zip(row) {
                    *di += d[j] * wk;
                }
            }
            d = d_in;
        }
        d
    }

    fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers
            .iter()
            .map(|l| LayerGrad { w: vec![0.0; l.w.len()], b: vec![0.0; l.b.len()] })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct LayerGrad {
    w: Vec<f64>,
    b: Vec<f64>,
}

fn add_grads(into: &mut [LayerGrad], from: &[LayerGrad]) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.w.iter_mut().zip(&b.w) {
            *x += y;
        }
        for (x, y) in a.b.iter_mut().zip(&b.b) {
            *x += y;
        }
    }
}

// ---------------------------------------------------------------------------
// Model.

/// Network shape: hidden widths of the encoder (the decoder mirrors them)
/// and the latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArch {
    pub hidden: Vec<usize>,
    pub latent: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        Self { hidden: vec![512, 128, 64, 64], latent: LATENT_DIM }
    }
}

/// Variational autoencoder over genome token sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    latent: usize,
    enc: Mlp,
    dec: Mlp,
}

/// Per-sample loss pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub kl: f64,
}

impl LossParts {
    pub fn total(&self, beta: f64) -> f64 {
        self.reconstruction + beta * self.kl
    }
}

/// Training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight on the KL term once warmup completes.
    pub beta: f64,
    /// Fraction of total steps over which beta ramps linearly from zero.
    pub warmup_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 64,
            learning_rate: 1.0e-3,
            beta: 1.0,
            warmup_frac: 0.1,
        }
    }
}

/// Loss trace from a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample total loss per epoch, at that epoch's beta.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

struct Adam {
    m_enc: Vec<LayerGrad>,
    v_enc: Vec<LayerGrad>,
    m_dec: Vec<LayerGrad>,
    v_dec: Vec<LayerGrad>,
    t: u64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1.0e-8;

    fn new(vae: &Vae) -> Self {
        Self {
            m_enc: vae.enc.zero_grads(),
            v_enc: vae.enc.zero_grads(),
            m_dec: vae.dec.zero_grads(),
            v_dec: vae.dec.zero_grads(),
            t: 0,
        }
    }

    fn step(&mut self, vae: &mut Vae, g_enc: &[LayerGrad], g_dec: &[LayerGrad], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t as i32);
        let c2 = 1.0 - Self::B2.powi(self.t as i32);
        let nets = [
            (&mut vae.enc, &mut self.m_enc, &mut self.v_enc, g_enc),
            (&mut vae.dec, &mut self.m_dec, &mut self.v_dec, g_dec),
        ];
        for (net, ms, vs, gs) in nets {
            for ((layer, m), (v, g)) in net.layers.iter_mut().zip(ms).zip(vs.iter_mut().zip(gs)) {
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                    *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                };
                for ((p, m), (v, g)) in
                    layer.w.iter_mut().zip(&mut m.w).zip(v.w.iter_mut().zip(&g.w))
                {
                    update(p, m, v, *g);
                }
                for ((p, m), (v, g)) in
                    layer.b.iter_mut().zip(&mut m.b).zip(v.b.iter_mut().zip(&g.b))
                {
                    update(p, m, v, *g);
                }
            }
        }
    }
}

impl Vae {
    pub fn new<R: Rng>(arch: &VaeArch, rng: &mut R) -> Self {
        assert!(arch.latent > 0, "latent width must be positive");
        let mut enc_widths = vec![ONE_HOT_LEN];
        enc_widths.extend_from_slice(&arch.hidden);
        enc_widths.push(2 * arch.latent);
        let mut dec_widths = vec![arch.latent];
        dec_widths.extend(arch.hidden.iter().rev());
        dec_widths.push(ONE_HOT_LEN);
        Self {
            latent: arch.latent,
            enc: Mlp::new(&enc_widths, rng),
            dec: Mlp::new(&dec_widths, rng),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent
    }

    /// Posterior mean for an input; the deterministic embedding.
    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.enc.forward_cache(x);
        acts.last().expect("nonempty")[..self.latent].to_vec()
    }

    pub fn encode_genome(&self, seq: &GenomeSeq) -> Vec<f64> {
        self.encode(&one_hot(seq))
    }

    /// Posterior mean and log-variance.
    pub fn encode_distribution(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let acts = self.enc.forward_cache(x);
        let out = acts.last().expect("nonempty");
        (out[..self.latent].to_vec(), out[self.latent..].to_vec())
    }

    /// Raw per-slot logits for a latent point.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.latent);
        self.dec.forward_cache(z).last().expect("nonempty").clone()
    }

    pub fn decode_genome(&self, z: &[f64]) -> GenomeSeq {
        argmax_tokens(&self.decode(z))
    }

    /// Loss for one sample with the noise draw fixed by the caller.
    pub fn sample_loss(&self, x: &[f64], target: &GenomeSeq, eps: &[f64], beta: f64) -> f64 {
        let (loss, _, _) = self.forward_loss(x, target, eps);
        loss.total(beta)
    }

    /// Forward pass shared by loss and gradients: returns the loss pieces,
    /// the encoder output, and the decoder logits.
    #[allow(clippy::type_complexity)]
    fn forward_loss(
        &self,
        x: &[f64],
        target: &GenomeSeq,
        eps: &[f64],
    ) -> (LossParts, (Vec<Vec<f64>>, Vec<f64>), Vec<Vec<f64>>) {
        let enc_acts = self.enc.forward_cache(x);
        let enc_out = enc_acts.last().expect("nonempty");
        let (mu, logvar) = (&enc_out[..self.latent], &enc_out[self.latent..]);
        let z: Vec<f64> = mu
            .iter()
            .zip(logvar)
            .zip(eps)
            .map(|((&m, &lv), &e)| m + e * (0.5 * lv).exp())
            .collect();
        let dec_acts = self.dec.forward_cache(&z);
        let logits = dec_acts.last().expect("nonempty");

        let mut reconstruction = 0.0;
        for (slot, &(start, width)) in slot_ranges().iter().enumerate() {
            let group = &logits[start..start + width];
            let peak = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = peak + group.iter().map(|&l| (l - peak).exp()).sum::<f64>().ln();
            reconstruction += lse - group[target.tokens()[slot] as usize];
        }
        let kl = 0.5
            * mu.iter()
                .zip(logvar)
                .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
                .sum::<f64>();
        (LossParts { reconstruction, kl }, (enc_acts, z), dec_acts)
    }

    /// Loss and parameter gradients for one sample, accumulated into the
    /// provided buffers.
    fn sample_grads(
        &self,
        x: &[f64],
        target: &GenomeSeq,
        eps: &[f64],
        beta: f64,
        g_enc: &mut [LayerGrad],
        g_dec: &mut [LayerGrad],
    ) -> f64 {
        let (loss, (enc_acts, _z), dec_acts) = self.forward_loss(x, target, eps);
        let logits = dec_acts.last().expect("nonempty");

        // Softmax cross-entropy gradient per slot.
        let mut d_logits = vec![0.0; ONE_HOT_LEN];
        for (slot, &(start, width)) in slot_ranges().iter().enumerate() {
            let group = &logits[start..start + width];
            let peak = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = group.iter().map(|&l| (l - peak).exp()).sum();
            for k in 0..width {
                d_logits[start + k] = (group[k] - peak).exp() / denom;
            }
            d_logits[start + target.tokens()[slot] as usize] -= 1.0;
        }

        let d_z = self.dec.backward(&dec_acts, &d_logits, g_dec);

        let enc_out = enc_acts.last().expect("nonempty");
        let (mu, logvar) = (&enc_out[..self.latent], &enc_out[self.latent..]);
        let mut d_enc_out = vec![0.0; 2 * self.latent];
        for i in 0..self.latent {
            let sigma = (0.5 * logvar[i]).exp();
            d_enc_out[i] = d_z[i] + beta * mu[i];
            d_enc_out[self.latent + i] =
                d_z[i] * eps[i] * 0.5 * sigma + beta * 0.5 * (logvar[i].exp() - 1.0);
        }
        self.enc.backward(&enc_acts, &d_enc_out, g_enc);
        loss.total(beta)
    }

    /// Trains in place. Deterministic for a fixed `rng` seed: the shuffle
    /// and noise draws come from `rng` in a fixed order, and batch gradients
    /// are reduced over fixed-size chunks in sample order.
    pub fn train<R: Rng>(
        &mut self,
        data: &[GenomeSeq],
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> TrainReport {
        assert!(!data.is_empty(), "empty training set");
        let inputs: Vec<Vec<f64>> = data.iter().map(one_hot).collect();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
        let total_steps = cfg.epochs * batches_per_epoch;
        let warmup = (cfg.warmup_frac * total_steps as f64).round() as usize;
        let mut adam = Adam::new(self);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_loss = Vec::with_capacity(cfg.epochs);
        let mut step = 0usize;

        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let beta = if warmup == 0 {
                    cfg.beta
                } else {
                    cfg.beta * ((step as f64 / warmup as f64).min(1.0))
                };
                let eps: Vec<Vec<f64>> = batch
                    .iter()
                    .map(|_| (0..self.latent).map(|_| normal.sample(rng)).collect())
                    .collect();
                // Fixed-size chunks keep the reduction order independent of
                // the thread count.
                let positions: Vec<usize> = (0..batch.len()).collect();
                let partials: Vec<(f64, Vec<LayerGrad>, Vec<LayerGrad>)> = positions
                    .par_chunks(8)
                    .map(|chunk| {
                        let mut ge = self.enc.zero_grads();
                        let mut gd = self.dec.zero_grads();
                        let mut loss = 0.0;
                        for &pos in chunk {
                            loss += self.sample_grads(
                                &inputs[batch[pos]],
                                &data[batch[pos]],
                                &eps[pos],
                                beta,
                                &mut ge,
                                &mut gd,
                            );
                        }
                        (loss, ge, gd)
                    })
                    .collect();
                let mut ge = self.enc.zero_grads();
                let mut gd = self.dec.zero_grads();
                let mut batch_loss = 0.0;
                for (l, pe, pd) in &partials {
                    batch_loss += l;
                    add_grads(&mut ge, pe);
                    add_grads(&mut gd, pd);
                }
                let scale = 1.0 / batch.len() as f64;
                for g in ge.iter_mut().chain(gd.iter_mut()) {
                    for v in g.w.iter_mut().chain(g.b.iter_mut()) {
                        *v *= scale;
                    }
                }
                adam.step(self, &ge, &gd, cfg.learning_rate);
                loss_sum += batch_loss;
                step += 1;
            }
            epoch_loss.push(loss_sum / data.len() as f64);
        }
        TrainReport { epoch_loss, steps: step }
    }

    /// Mean fraction of correctly reconstructed token slots over a dataset,
    /// using the deterministic embedding (no noise).
    pub fn reconstruction_accuracy(&self, data: &[GenomeSeq]) -> f64 {
        assert!(!data.is_empty(), "empty evaluation set");
        let mut acc = 0.0;
        for seq in data {
            let rebuilt = self.decode_genome(&self.encode_genome(seq));
            let correct = seq
                .tokens()
                .iter()
                .zip(rebuilt.tokens())
                .filter(|(a, b)| a == b)
                .count();
            acc += correct as f64 / GENOME_LEN as f64;
        }
        acc / data.len() as f64
    }

    // -- Parameter access for the finite-difference check. ------------------

    pub fn n_params(&self) -> usize {
        self.enc
            .layers
            .iter()
            .chain(&self.dec.layers)
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Flat view over every parameter: encoder layers then decoder layers,
    /// weights before biases within a layer.
    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let mut i = idx;
        for l in self.enc.layers.iter_mut().chain(&mut self.dec.layers) {
            if i < l.w.len() {
                return &mut l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return &mut l.b[i];
            }
            i -= l.b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Gradient of the single-sample loss in the same flat order.
    pub fn param_grads(&self, x: &[f64], target: &GenomeSeq, eps: &[f64], beta: f64) -> Vec<f64> {
        let mut ge = self.enc.zero_grads();
        let mut gd = self.dec.zero_grads();
        self.sample_grads(x, target, eps, beta, &mut ge, &mut gd);
        let mut flat = Vec::with_capacity(self.n_params());
        for g in ge.iter().chain(&gd) {
            flat.extend_from_slice(&g.w);
            flat.extend_from_slice(&g.b);
        }
        flat
    }

    // -- Model file I/O. -----------------------------------------------------

    /// Writes the model: magic, version, latent width, then each stack as a
    /// layer count followed by (in, out, weights, biases), all little endian.
    pub fn save<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.latent as u32).to_le_bytes())?;
        for net in [&self.enc, &self.dec] {
            w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
            for l in &net.layers {
                w.write_all(&(l.in_dim as u32).to_le_bytes())?;
                w.write_all(&(l.out_dim as u32).to_le_bytes())?;
                for v in l.w.iter().chain(&l.b) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad model magic"));
        }
        let version = read_u32(r)?;
        if version != 1 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported model version {version}"),
            ));
        }
        let latent = read_u32(r)? as usize;
        let mut nets = Vec::with_capacity(2);
        for _ in 0..2 {
            let n_layers = read_u32(r)? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let in_dim = read_u32(r)? as usize;
                let out_dim = read_u32(r)? as usize;
                let mut w = vec![0.0; in_dim * out_dim];
                let mut b = vec![0.0; out_dim];
                for v in w.iter_mut().chain(&mut b) {
                    *v = read_f64(r)?;
                }
                layers.push(Dense { w, b, in_dim, out_dim });
            }
            nets.push(Mlp { layers });
        }
        let dec = nets.pop().expect("two stacks");
        let enc = nets.pop().expect("two stacks");
        let enc_out = enc.layers.last().map(|l| l.out_dim).unwrap_or(0);
        let dec_in = dec.layers.first().map(|l| l.in_dim).unwrap_or(0);
        if enc_out != 2 * latent || dec_in != latent {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "model widths disagree with latent dimension",
            ));
        }
        Ok(Self { latent, enc, dec })
    }
}

const MAGIC: &[u8; 8] = b"MMVAE001";

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
