//! Deterministic pseudo-randomness for every stochastic component.
//!
//! A run is keyed by a single `u64` root seed. Each consumer (dataset
//! collection, network init, target-smoothing noise, evaluation resets, batch
//! sampling) owns a named substream derived from `(root_seed, stream id)`, so
//! adding draws to one component never shifts the draws seen by another.
//!
//! Generator: xoshiro256++ seeded through SplitMix64. Gaussians come from the
//! Box-Muller transform with the second variate cached, so the number of raw
//! u64 draws per `normal()` call is deterministic (two per generated pair).

/// Stream ids for the fixed substreams of a training run. ESBC ensemble
/// member `i` offsets the per-trainer streams by `i` (member 0 uses the same
/// streams as a plain SelfBC run, which keeps the two bit-identical at
/// `n_ens = 1`).
pub mod streams {
    /// Environment resets while collecting a dataset.
    pub const DATA_RESET: u64 = 1;
    /// Behavior-controller noise while collecting a dataset.
    pub const DATA_CONTROLLER: u64 = 2;
    /// Network initialization, consumed in documented construction order.
    pub const INIT: u64 = 3;
    /// Evaluation-episode resets (re-derived at every evaluation, so each
    /// checkpoint is scored on the same start states).
    pub const EVAL: u64 = 4;
    /// Minibatch index sampling (shared across ESBC ensemble members).
    pub const BATCH: u64 = 5;
    /// Target-policy smoothing noise; ensemble member `i` uses `NOISE + i`.
    pub const NOISE: u64 = 16;
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One independent xoshiro256++ stream.
#[derive(Debug, Clone)]
pub struct Stream {
    s: [u64; 4],
    cached_normal: Option<f64>,
}

impl Stream {
    /// Derive the substream `stream_id` of `root_seed`.
    pub fn derive(root_seed: u64, stream_id: u64) -> Self {
        let mut sm = root_seed ^ stream_id.wrapping_mul(GOLDEN_GAMMA);
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        // All-zero state is the one degenerate case for xoshiro.
        if s == [0, 0, 0, 0] {
            s[0] = GOLDEN_GAMMA;
        }
        Stream { s, cached_normal: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller; pairs are generated together and the
    /// second variate is cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.cached_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.cached_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Exponential(1) via inversion; used for Dirichlet sampling.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    /// One row of a flat Dirichlet(1, .., 1): normalized Exponential(1)
    /// draws. Always consumes exactly `n` draws.
    pub fn dirichlet_flat(&mut self, n: usize) -> Vec<f64> {
        assert!(n > 0, "dirichlet_flat needs at least one category");
        let mut row: Vec<f64> = (0..n).map(|_| self.exponential()).collect();
        let total: f64 = row.iter().sum();
        for x in row.iter_mut() {
            *x /= total;
        }
        row
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index over an empty range");
        // Multiply-shift bounded draw; bias is < 2^-64 * n, irrelevant here,
        // and the draw count per call is always exactly one.
        let x = self.next_u64();
        (((x as u128) * (n as u128)) >> 64) as usize
    }
}
