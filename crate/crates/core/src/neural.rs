//! Small LSTM and 1D-CNN next-symbol classifiers trained online.
//!
//! Both models embed a window of `k` symbols, run it through the recurrent or
//! convolutional stack and project to a softmax over the whole alphabet
//! (Unknown included). Gradients are derived by hand and applied with Adam.
//! All parameters live in one flat `f64` vector; [`NeuralModel::param_views`]
//! names its slices.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{SymbolId, UNKNOWN};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("loss is not finite ({0}); learning rate too high?")]
    NumericalDivergence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Lstm,
    Cnn1d,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Lstm => "LSTM",
            Arch::Cnn1d => "CNN",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralConfig {
    pub arch: Arch,
    /// Window length `k`.
    pub seq_len: usize,
    /// LSTM hidden size, or CNN channel count.
    pub hidden: usize,
    pub layers: usize,
    pub embed: usize,
    /// CNN kernel width (odd).
    pub kernel: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl NeuralConfig {
    pub fn new(arch: Arch, seq_len: usize) -> Self {
        NeuralConfig {
            arch,
            seq_len,
            hidden: 64,
            layers: 2,
            embed: 32,
            kernel: 3,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.seq_len == 0 || self.hidden == 0 || self.layers == 0 || self.embed == 0 {
            return bad("seq_len, hidden, layers and embed must all be at least 1");
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return bad("kernel width must be odd");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.eps <= 0.0 {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Range<usize>,
    /// (weights, bias) per layer.
    layers: Vec<(Range<usize>, Range<usize>)>,
    out_w: Range<usize>,
    out_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(cfg: &NeuralConfig, vocab: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let embed = take(vocab * cfg.embed);
        let h = cfg.hidden;
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = if l == 0 { cfg.embed } else { h };
                match cfg.arch {
                    Arch::Lstm => (take(4 * h * (input + h)), take(4 * h)),
                    Arch::Cnn1d => (take(h * cfg.kernel * input), take(h)),
                }
            })
            .collect();
        let out_w = take(vocab * h);
        let out_b = take(vocab);
        Layout {
            embed,
            layers,
            out_w,
            out_b,
            total: at,
        }
    }
}

/// Forward state kept for backpropagation.
#[derive(Debug, Clone)]
enum Cache {
    Lstm(Vec<LstmLayerCache>),
    Cnn(Vec<CnnLayerCache>, Vec<usize>),
}

#[derive(Debug, Clone)]
struct LstmLayerCache {
    /// `[x_t ; h_{t-1}]` rows, `T x (in + H)`.
    xh: Vec<f64>,
    /// Activated gates i, f, g, o, `T x 4H`.
    gates: Vec<f64>,
    /// Cell states, `T x H`.
    c: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CnnLayerCache {
    /// Layer input, `T x in`.
    x: Vec<f64>,
    /// Pre-activations, `T x C`.
    y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub probs: Vec<f64>,
    hidden: Vec<f64>,
    cache: Cache,
}

#[derive(Debug, Clone)]
pub struct NeuralModel {
    cfg: NeuralConfig,
    vocab: usize,
    layout: Layout,
    params: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest value; ties go to the smaller index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The `k` symbols before position `t`, left-padded with Unknown.
pub fn window_at(symbols: &[SymbolId], t: usize, k: usize) -> Vec<SymbolId> {
    let lo = t.saturating_sub(k);
    let mut w = vec![UNKNOWN; k - (t - lo)];
    w.extend_from_slice(&symbols[lo..t]);
    w
}

impl NeuralModel {
    /// Fresh model over an alphabet of `vocab` symbols (ids `0..vocab`).
    pub fn new(cfg: NeuralConfig, vocab: usize) -> Result<Self, NeuralError> {
        cfg.validate()?;
        if vocab == 0 {
            return Err(NeuralError::InvalidConfig("empty alphabet".into()));
        }
        let layout = Layout::new(&cfg, vocab);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |r: &Range<usize>, fan_in: usize, params: &mut [f64]| {
            let s = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[r.clone()] {
                *p = rng.random_range(-s..=s);
            }
        };
        // one-hot lookups have fan-in 1
        fill(&layout.embed, 1, &mut params);
        let h = cfg.hidden;
        for (l, (w, b)) in layout.layers.iter().enumerate() {
            let input = if l == 0 { cfg.embed } else { h };
            let fan_in = match cfg.arch {
                Arch::Lstm => input + h,
                Arch::Cnn1d => input * cfg.kernel,
            };
            fill(w, fan_in, &mut params);
            fill(b, fan_in, &mut params);
            if cfg.arch == Arch::Lstm {
                params[b.start + h..b.start + 2 * h].fill(1.0);
            }
        }
        fill(&layout.out_w, h, &mut params);
        fill(&layout.out_b, h, &mut params);

        let n = layout.total;
        Ok(NeuralModel {
            cfg,
            vocab,
            layout,
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        })
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named slices of the flat parameter vector.
    pub fn param_views(&self) -> Vec<(String, Range<usize>)> {
        let mut v = vec![("embedding".to_string(), self.layout.embed.clone())];
        let (wn, bn) = match self.cfg.arch {
            Arch::Lstm => ("gates.weight", "gates.bias"),
            Arch::Cnn1d => ("conv.kernel", "conv.bias"),
        };
        for (l, (w, b)) in self.layout.layers.iter().enumerate() {
            v.push((format!("layer{l}.{wn}"), w.clone()));
            v.push((format!("layer{l}.{bn}"), b.clone()));
        }
        v.push(("output.weight".into(), self.layout.out_w.clone()));
        v.push(("output.bias".into(), self.layout.out_b.clone()));
        v
    }

    fn check_window(&self, window: &[SymbolId]) {
        assert_eq!(
            window.len(),
            self.cfg.seq_len,
            "window length must equal seq_len"
        );
        assert!(
            window.iter().all(|&s| (s as usize) < self.vocab),
            "symbol outside the model alphabet"
        );
    }

    fn embed_window(&self, window: &[SymbolId]) -> Vec<f64> {
        let d = self.cfg.embed;
        let e = &self.params[self.layout.embed.clone()];
        let mut x = Vec::with_capacity(window.len() * d);
        for &s in window {
            x.extend_from_slice(&e[s as usize * d..(s as usize + 1) * d]);
        }
        x
    }

    pub fn forward(&self, window: &[SymbolId]) -> Forward {
        self.check_window(window);
        let x = self.embed_window(window);
        let (hidden, cache) = match self.cfg.arch {
            Arch::Lstm => self.lstm_forward(x),
            Arch::Cnn1d => self.cnn_forward(x),
        };
        let h = self.cfg.hidden;
        let wo = &self.params[self.layout.out_w.clone()];
        let bo = &self.params[self.layout.out_b.clone()];
        let logits: Vec<f64> = (0..self.vocab)
            .map(|s| bo[s] + dot(&wo[s * h..(s + 1) * h], &hidden))
            .collect();
        Forward {
            probs: softmax(&logits),
            hidden,
            cache,
        }
    }

    fn lstm_forward(&self, mut input: Vec<f64>) -> (Vec<f64>, Cache) {
        let t_len = self.cfg.seq_len;
        let h = self.cfg.hidden;
        let mut caches = Vec::with_capacity(self.cfg.layers);
        for (l, (wr, br)) in self.layout.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.cfg.embed } else { h };
            let cols = in_dim + h;
            let w = &self.params[wr.clone()];
            let b = &self.params[br.clone()];
            let mut xh = vec![0.0; t_len * cols];
            let mut gates = vec![0.0; t_len * 4 * h];
            let mut c = vec![0.0; t_len * h];
            let mut hs = vec![0.0; t_len * h];
            for t in 0..t_len {
                let row = &mut xh[t * cols..(t + 1) * cols];
                row[..in_dim].copy_from_slice(&input[t * in_dim..(t + 1) * in_dim]);
                if t > 0 {
                    row[in_dim..].copy_from_slice(&hs[(t - 1) * h..t * h]);
                }
                let row = &xh[t * cols..(t + 1) * cols];
                let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                for (r, gr) in g.iter_mut().enumerate() {
                    let z = b[r] + dot(&w[r * cols..(r + 1) * cols], row);
                    *gr = if (2 * h..3 * h).contains(&r) {
                        z.tanh()
                    } else {
                        sigmoid(z)
                    };
                }
                for j in 0..h {
                    let c_prev = if t > 0 { c[(t - 1) * h + j] } else { 0.0 };
                    let cj = g[h + j] * c_prev + g[j] * g[2 * h + j];
                    c[t * h + j] = cj;
                    hs[t * h + j] = g[3 * h + j] * cj.tanh();
                }
            }
            input = hs.clone();
            caches.push(LstmLayerCache {
                xh,
                gates,
                c,
                h: hs,
            });
        }
        let last = input[(t_len - 1) * h..].to_vec();
        (last, Cache::Lstm(caches))
    }

    fn cnn_forward(&self, mut input: Vec<f64>) -> (Vec<f64>, Cache) {
        let t_len = self.cfg.seq_len;
        let ch = self.cfg.hidden;
        let ks = self.cfg.kernel;
        let pad = ks / 2;
        let mut caches = Vec::with_capacity(self.cfg.layers);
        for (l, (wr, br)) in self.layout.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.cfg.embed } else { ch };
            let kern = &self.params[wr.clone()];
            let b = &self.params[br.clone()];
            let mut y = vec![0.0; t_len * ch];
            for t in 0..t_len {
                for c in 0..ch {
                    let mut acc = b[c];
                    for k in 0..ks {
                        let Some(s) = (t + k).checked_sub(pad).filter(|&s| s < t_len) else {
                            continue;
                        };
                        let off = (c * ks + k) * in_dim;
                        acc += dot(
                            &kern[off..off + in_dim],
                            &input[s * in_dim..(s + 1) * in_dim],
                        );
                    }
                    y[t * ch + c] = acc;
                }
            }
            let next: Vec<f64> = y.iter().map(|&v| v.max(0.0)).collect();
            caches.push(CnnLayerCache { x: input, y });
            input = next;
        }
        let mut pooled = vec![0.0; ch];
        let mut arg = vec![0usize; ch];
        for c in 0..ch {
            let mut best = 0;
            for t in 1..t_len {
                if input[t * ch + c] > input[best * ch + c] {
                    best = t;
                }
            }
            pooled[c] = input[best * ch + c];
            arg[c] = best;
        }
        (pooled, Cache::Cnn(caches, arg))
    }

    /// Cross-entropy (natural log) of `target` under a forward pass.
    pub fn loss_of(fwd: &Forward, target: SymbolId) -> f64 {
        -fwd.probs[target as usize].ln()
    }

    /// Loss and full gradient for one (window, target) pair.
    pub fn loss_and_grad(&self, window: &[SymbolId], target: SymbolId) -> (f64, Vec<f64>) {
        let fwd = self.forward(window);
        let loss = Self::loss_of(&fwd, target);
        (loss, self.backward(window, target, &fwd))
    }

    fn backward(&self, window: &[SymbolId], target: SymbolId, fwd: &Forward) -> Vec<f64> {
        assert!(
            (target as usize) < self.vocab,
            "target outside the model alphabet"
        );
        let h = self.cfg.hidden;
        let mut grad = vec![0.0; self.layout.total];
        let mut dlogits = fwd.probs.clone();
        dlogits[target as usize] -= 1.0;

        let wo = &self.params[self.layout.out_w.clone()];
        let mut dhidden = vec![0.0; h];
        {
            let (gw, rest) = grad[self.layout.out_w.start..].split_at_mut(self.layout.out_w.len());
            let gb = &mut rest[..self.vocab];
            for (s, &d) in dlogits.iter().enumerate() {
                gb[s] += d;
                axpy(d, &fwd.hidden, &mut gw[s * h..(s + 1) * h]);
                axpy(d, &wo[s * h..(s + 1) * h], &mut dhidden);
            }
        }

        let dx = match &fwd.cache {
            Cache::Lstm(caches) => self.lstm_backward(caches, dhidden, &mut grad),
            Cache::Cnn(caches, arg) => self.cnn_backward(caches, arg, dhidden, &mut grad),
        };

        let d = self.cfg.embed;
        let ge = &mut grad[self.layout.embed.clone()];
        for (t, &s) in window.iter().enumerate() {
            axpy(
                1.0,
                &dx[t * d..(t + 1) * d],
                &mut ge[s as usize * d..(s as usize + 1) * d],
            );
        }
        grad
    }

    /// Returns the gradient with respect to the embedded inputs.
    fn lstm_backward(
        &self,
        caches: &[LstmLayerCache],
        dtop: Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let t_len = self.cfg.seq_len;
        let h = self.cfg.hidden;
        // gradient arriving at each layer's hidden outputs
        let mut dh_out = vec![0.0; t_len * h];
        dh_out[(t_len - 1) * h..].copy_from_slice(&dtop);
        for (l, cache) in caches.iter().enumerate().rev() {
            let in_dim = if l == 0 { self.cfg.embed } else { h };
            let cols = in_dim + h;
            let (wr, br) = &self.layout.layers[l];
            let w = &self.params[wr.clone()];
            let mut dx = vec![0.0; t_len * in_dim];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];
            let mut dxh = vec![0.0; cols];
            for t in (0..t_len).rev() {
                let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let c = cache.c[t * h + j];
                    let c_prev = if t > 0 { cache.c[(t - 1) * h + j] } else { 0.0 };
                    let tc = c.tanh();
                    let dh = dh_out[t * h + j] + dh_next[j];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                    dc_next[j] = dc * f;
                    dz[j] = dc * gg * i * (1.0 - i);
                    dz[h + j] = dc * c_prev * f * (1.0 - f);
                    dz[2 * h + j] = dc * i * (1.0 - gg * gg);
                    dz[3 * h + j] = dh * tc * o * (1.0 - o);
                }
                let xh = &cache.xh[t * cols..(t + 1) * cols];
                dxh.fill(0.0);
                {
                    let gw = &mut grad[wr.clone()];
                    for (r, &d) in dz.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, xh, &mut gw[r * cols..(r + 1) * cols]);
                            axpy(d, &w[r * cols..(r + 1) * cols], &mut dxh);
                        }
                    }
                }
                let gb = &mut grad[br.clone()];
                axpy(1.0, &dz, gb);
                dx[t * in_dim..(t + 1) * in_dim].copy_from_slice(&dxh[..in_dim]);
                dh_next.copy_from_slice(&dxh[in_dim..]);
            }
            debug_assert_eq!(cache.h.len(), t_len * h);
            dh_out = dx;
        }
        dh_out
    }

    fn cnn_backward(
        &self,
        caches: &[CnnLayerCache],
        arg: &[usize],
        dpooled: Vec<f64>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let t_len = self.cfg.seq_len;
        let ch = self.cfg.hidden;
        let ks = self.cfg.kernel;
        let pad = ks / 2;
        // gradient at the top layer's activations
        let mut da = vec![0.0; t_len * ch];
        for c in 0..ch {
            da[arg[c] * ch + c] = dpooled[c];
        }
        for (l, cache) in caches.iter().enumerate().rev() {
            let in_dim = if l == 0 { self.cfg.embed } else { ch };
            let (wr, br) = &self.layout.layers[l];
            let kern = &self.params[wr.clone()];
            let mut dx = vec![0.0; t_len * in_dim];
            for t in 0..t_len {
                for c in 0..ch {
                    let dy = if cache.y[t * ch + c] > 0.0 {
                        da[t * ch + c]
                    } else {
                        0.0
                    };
                    if dy == 0.0 {
                        continue;
                    }
                    grad[br.start + c] += dy;
                    for k in 0..ks {
                        let Some(s) = (t + k).checked_sub(pad).filter(|&s| s < t_len) else {
                            continue;
                        };
                        let off = (c * ks + k) * in_dim;
                        let xs = &cache.x[s * in_dim..(s + 1) * in_dim];
                        axpy(dy, xs, &mut grad[wr.start + off..wr.start + off + in_dim]);
                        axpy(
                            dy,
                            &kern[off..off + in_dim],
                            &mut dx[s * in_dim..(s + 1) * in_dim],
                        );
                    }
                }
            }
            da = dx;
        }
        da
    }

    /// Smallest distance of any ReLU input or max-pool runner-up from a
    /// switch point. Finite differences are only meaningful when this is
    /// well above the step size. Infinite for the LSTM, which is smooth.
    pub fn nondifferentiable_margin(&self, window: &[SymbolId]) -> f64 {
        let fwd = self.forward(window);
        let Cache::Cnn(caches, arg) = &fwd.cache else {
            return f64::INFINITY;
        };
        let ch = self.cfg.hidden;
        let t_len = self.cfg.seq_len;
        let mut margin = f64::INFINITY;
        for cache in caches {
            for &y in &cache.y {
                margin = margin.min(y.abs());
            }
        }
        let top = &caches.last().expect("at least one layer").y;
        for c in 0..ch {
            let best = top[arg[c] * ch + c].max(0.0);
            if best == 0.0 {
                // every activation is dead; the ReLU margin covers this channel
                continue;
            }
            for t in (0..t_len).filter(|&t| t != arg[c]) {
                margin = margin.min(best - top[t * ch + c].max(0.0));
            }
        }
        margin
    }

    fn adam_update(&mut self, grad: &[f64]) {
        self.steps += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powf(self.steps as f64);
        let bc2 = 1.0 - b2.powf(self.steps as f64);
        let lr = self.cfg.lr;
        for (((p, m), v), &g) in self
            .params
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(grad)
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.cfg.eps);
        }
    }

    /// One Adam step on a single example; returns its loss before the update.
    pub fn train_step(
        &mut self,
        window: &[SymbolId],
        target: SymbolId,
    ) -> Result<f64, NeuralError> {
        let fwd = self.forward(window);
        self.step_from(window, target, &fwd)
    }

    fn step_from(
        &mut self,
        window: &[SymbolId],
        target: SymbolId,
        fwd: &Forward,
    ) -> Result<f64, NeuralError> {
        let loss = Self::loss_of(fwd, target);
        if !loss.is_finite() {
            return Err(NeuralError::NumericalDivergence(loss));
        }
        let grad = self.backward(window, target, fwd);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(NeuralError::NumericalDivergence(f64::NAN));
        }
        self.adam_update(&grad);
        Ok(loss)
    }

    /// Argmax of the output distribution; ties go to the smaller id.
    pub fn predict(&self, window: &[SymbolId]) -> SymbolId {
        argmax(&self.forward(window).probs) as SymbolId
    }

    /// Online step: predict from `window`, then train on the revealed
    /// `target`, sharing one forward pass. Returns the prediction made
    /// before the update.
    pub fn predict_and_train(
        &mut self,
        window: &[SymbolId],
        target: SymbolId,
    ) -> Result<SymbolId, NeuralError> {
        let fwd = self.forward(window);
        let pred = argmax(&fwd.probs) as SymbolId;
        self.step_from(window, target, &fwd)?;
        Ok(pred)
    }
}
