//! Offline dataset construction, state normalization, minibatch sampling,
//! and the bit-exact "SBC1" on-disk format.
//!
//! File layout (little-endian), 32-byte header:
//!
//! ```text
//! magic "SBC1" | version u32 | n u64 | state_dim u32 | action_dim u32
//! | reserved u32 (zero) | crc32 u32
//! ```
//!
//! followed by the payload arrays in order `states, actions, rewards,
//! next_states` (contiguous f64) and `dones` (u8), then a u32-length-prefixed
//! UTF-8 JSON metadata blob. The CRC-32 covers exactly the payload arrays.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{
    pointmass_reset, pointmass_step, scripted_controller, BehaviorKind, BehaviorSpec, ACTION_DIM,
    STATE_DIM,
};
use crate::rng::{streams, Stream};

pub const MAGIC: [u8; 4] = *b"SBC1";
pub const FORMAT_VERSION: u32 = 1;
/// Std floor applied during normalization.
pub const NORM_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not an SBC1 file)")]
    MagicMismatch,
    #[error("unsupported format version {got}")]
    UnsupportedVersion { got: u32 },
    #[error("file truncated while reading {section}")]
    Truncated { section: &'static str },
    #[error("payload checksum mismatch: header {expected:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { expected: u32, computed: u32 },
    #[error("metadata is not valid JSON: {0}")]
    MetaParse(#[from] serde_json::Error),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_name: String,
    pub behavior_kind: String,
    pub seed: u64,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Immutable transition store. Dones mark the horizon of the collection
/// episodes; how they are bootstrapped is the trainer's decision.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<u8>,
    pub meta: DatasetMeta,
}

impl OfflineDataset {
    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    /// Mean undiscounted return of the complete episodes in collection order
    /// (episodes are delimited by the done flags).
    pub fn mean_episode_return(&self) -> f64 {
        let mut totals = Vec::new();
        let mut acc = 0.0;
        for i in 0..self.n() {
            acc += self.rewards[i];
            if self.dones[i] == 1 {
                totals.push(acc);
                acc = 0.0;
            }
        }
        if totals.is_empty() {
            return acc;
        }
        totals.iter().sum::<f64>() / totals.len() as f64
    }
}

/// One sampled minibatch; rows correspond between arrays.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 where the transition ended its episode, else 0.0.
    pub dones: Array1<f64>,
}

impl Batch {
    /// Zero every done flag: episodes that end only because of a time limit
    /// are bootstrapped as non-terminal.
    pub fn with_bootstrapped_time_limits(mut self) -> Batch {
        self.dones.fill(0.0);
        self
    }
}

/// Roll scripted-controller episodes on the point-mass task until
/// `n_transitions` are recorded (the last episode may be cut short).
pub fn generate_dataset(
    spec: &BehaviorSpec,
    n_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset, DatasetError> {
    if n_transitions < 1000 {
        return Err(DatasetError::InvalidInput(format!(
            "n_transitions = {n_transitions}, need at least 1000"
        )));
    }
    spec.validate()
        .map_err(|e| DatasetError::InvalidInput(e.to_string()))?;
    let mut reset = Stream::derive(seed, streams::DATA_RESET);
    let mut ctrl = Stream::derive(seed, streams::DATA_CONTROLLER);

    let mut states = Array2::zeros((n_transitions, STATE_DIM));
    let mut actions = Array2::zeros((n_transitions, ACTION_DIM));
    let mut rewards = Array1::zeros(n_transitions);
    let mut next_states = Array2::zeros((n_transitions, STATE_DIM));
    let mut dones = vec![0u8; n_transitions];

    let mut i = 0;
    'outer: loop {
        let mut state = pointmass_reset(&mut reset);
        loop {
            let action = scripted_controller(spec, &state, &mut ctrl);
            let (next, reward, done) =
                pointmass_step(&state, action).expect("controller actions are clipped");
            states.row_mut(i).assign(&state.observation());
            actions.row_mut(i).assign(&Array1::from(action.to_vec()));
            rewards[i] = reward;
            next_states.row_mut(i).assign(&next.observation());
            dones[i] = done as u8;
            i += 1;
            if i == n_transitions {
                break 'outer;
            }
            if done {
                break;
            }
            state = next;
        }
    }

    let kind = match spec.kind {
        BehaviorKind::Expert => "expert",
        BehaviorKind::Medium => "medium",
        BehaviorKind::Random => "random",
    };
    Ok(OfflineDataset {
        states,
        actions,
        rewards,
        next_states,
        dones,
        meta: DatasetMeta {
            env_name: "pointmass".to_string(),
            behavior_kind: kind.to_string(),
            seed,
            state_dim: STATE_DIM,
            action_dim: ACTION_DIM,
        },
    })
}

/// Per-dimension state statistics, shared by trainers and evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl NormStats {
    pub fn normalize_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn normalize_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn denormalize_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std + &self.mean
    }
}

/// Mean and population std over `states ∪ next_states`, std floored at 1e-3.
pub fn compute_norm_stats(dataset: &OfflineDataset) -> NormStats {
    let n2 = (2 * dataset.n()) as f64;
    let sum = dataset.states.sum_axis(Axis(0)) + dataset.next_states.sum_axis(Axis(0));
    let mean = sum / n2;
    let mut var = Array1::<f64>::zeros(dataset.state_dim());
    for rows in [&dataset.states, &dataset.next_states] {
        for row in rows.rows() {
            for (d, &v) in row.iter().enumerate() {
                let c = v - mean[d];
                var[d] += c * c;
            }
        }
    }
    var /= n2;
    let std = var.mapv(|v| v.sqrt().max(NORM_EPS));
    NormStats { mean, std }
}

/// Uniform sampling with replacement; consumes exactly `batch_size` draws.
pub fn sample_batch(
    dataset: &OfflineDataset,
    stream: &mut Stream,
    batch_size: usize,
) -> Result<Batch, DatasetError> {
    if batch_size == 0 || batch_size > dataset.n() {
        return Err(DatasetError::InvalidInput(format!(
            "batch_size = {batch_size} outside [1, {}]",
            dataset.n()
        )));
    }
    let idx: Vec<usize> = (0..batch_size).map(|_| stream.index(dataset.n())).collect();
    let states = dataset.states.select(Axis(0), &idx);
    let actions = dataset.actions.select(Axis(0), &idx);
    let next_states = dataset.next_states.select(Axis(0), &idx);
    let rewards = Array1::from_iter(idx.iter().map(|&i| dataset.rewards[i]));
    let dones = Array1::from_iter(idx.iter().map(|&i| dataset.dones[i] as f64));
    Ok(Batch { states, actions, rewards, next_states, dones })
}

fn f64s_to_bytes(out: &mut Vec<u8>, arr: impl IntoIterator<Item = f64>) {
    for v in arr {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_exact_or(
    r: &mut impl Read,
    buf: &mut [u8],
    section: &'static str,
) -> Result<(), DatasetError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DatasetError::Truncated { section }
        } else {
            DatasetError::Io(e)
        }
    })
}

fn bytes_to_f64s(buf: &[u8]) -> Vec<f64> {
    buf.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Write the dataset in SBC1 format.
pub fn dataset_serialize(dataset: &OfflineDataset, path: &Path) -> Result<(), DatasetError> {
    let n = dataset.n();
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());

    let mut payload = Vec::with_capacity(n * (sd * 16 + ad * 8 + 9));
    f64s_to_bytes(&mut payload, dataset.states.iter().cloned());
    f64s_to_bytes(&mut payload, dataset.actions.iter().cloned());
    f64s_to_bytes(&mut payload, dataset.rewards.iter().cloned());
    f64s_to_bytes(&mut payload, dataset.next_states.iter().cloned());
    payload.extend_from_slice(&dataset.dones);
    let crc = crc32fast::hash(&payload);

    let meta = serde_json::to_vec(&dataset.meta)?;

    let mut file = std::fs::File::create(path)?;
    file.write_all(&MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&(n as u64).to_le_bytes())?;
    file.write_all(&(sd as u32).to_le_bytes())?;
    file.write_all(&(ad as u32).to_le_bytes())?;
    file.write_all(&0u32.to_le_bytes())?; // reserved
    file.write_all(&crc.to_le_bytes())?;
    file.write_all(&payload)?;
    file.write_all(&(meta.len() as u32).to_le_bytes())?;
    file.write_all(&meta)?;
    Ok(())
}

/// Read an SBC1 file back. Magic, version, truncation, and checksum failures
/// are reported as distinct errors.
pub fn dataset_deserialize(path: &Path) -> Result<OfflineDataset, DatasetError> {
    let mut file = std::fs::File::open(path)?;

    let mut header = [0u8; 32];
    read_exact_or(&mut file, &mut header, "header")?;
    if header[0..4] != MAGIC {
        return Err(DatasetError::MagicMismatch);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion { got: version });
    }
    let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let sd = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    let ad = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    // header[24..28] reserved.
    let crc_expected = u32::from_le_bytes(header[28..32].try_into().unwrap());
    if n == 0 || sd == 0 || ad == 0 {
        return Err(DatasetError::InvalidInput(format!(
            "degenerate dimensions in header: n={n}, state_dim={sd}, action_dim={ad}"
        )));
    }

    let payload_len = n * sd * 8 + n * ad * 8 + n * 8 + n * sd * 8 + n;
    let mut payload = vec![0u8; payload_len];
    read_exact_or(&mut file, &mut payload, "payload")?;
    let crc_computed = crc32fast::hash(&payload);
    if crc_computed != crc_expected {
        return Err(DatasetError::ChecksumMismatch {
            expected: crc_expected,
            computed: crc_computed,
        });
    }

    let mut len_buf = [0u8; 4];
    read_exact_or(&mut file, &mut len_buf, "meta length")?;
    let meta_len = u32::from_le_bytes(len_buf) as usize;
    let mut meta_buf = vec![0u8; meta_len];
    read_exact_or(&mut file, &mut meta_buf, "meta")?;
    let meta: DatasetMeta = serde_json::from_slice(&meta_buf)?;

    let mut off = 0;
    let mut take = |elems: usize| {
        let bytes = elems * 8;
        let out = bytes_to_f64s(&payload[off..off + bytes]);
        off += bytes;
        out
    };
    let states = Array2::from_shape_vec((n, sd), take(n * sd)).unwrap();
    let actions = Array2::from_shape_vec((n, ad), take(n * ad)).unwrap();
    let rewards = Array1::from(take(n));
    let next_states = Array2::from_shape_vec((n, sd), take(n * sd)).unwrap();
    let dones = payload[off..off + n].to_vec();

    if meta.state_dim != sd || meta.action_dim != ad {
        return Err(DatasetError::InvalidInput(
            "metadata dimensions disagree with header".to_string(),
        ));
    }
    Ok(OfflineDataset { states, actions, rewards, next_states, dones, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small(spec: BehaviorSpec, seed: u64) -> OfflineDataset {
        generate_dataset(&spec, 1000, seed).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_episode_aligned() {
        let a = small(BehaviorSpec::random(), 3);
        let b = small(BehaviorSpec::random(), 3);
        assert_eq!(a, b);
        assert_eq!(a.n(), 1000);
        // 1000 transitions = 10 complete episodes of 100 steps.
        let n_done: usize = a.dones.iter().map(|&d| d as usize).sum();
        assert_eq!(n_done, 10);
        assert_eq!(a.dones[99], 1);
        assert_eq!(a.dones[100], 0);
        assert!(a.actions.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn generation_rejects_tiny_datasets() {
        assert!(generate_dataset(&BehaviorSpec::random(), 999, 0).is_err());
    }

    #[test]
    fn medium_return_sits_between_random_and_expert() {
        let random = generate_dataset(&BehaviorSpec::random(), 5000, 11).unwrap();
        let medium = generate_dataset(&BehaviorSpec::medium(), 5000, 11).unwrap();
        let expert = generate_dataset(&BehaviorSpec::expert(), 5000, 11).unwrap();
        let (r, m, e) = (
            random.mean_episode_return(),
            medium.mean_episode_return(),
            expert.mean_episode_return(),
        );
        assert!(r < m && m < e, "returns not ordered: {r} {m} {e}");
    }

    #[test]
    fn norm_stats_match_naive_oracle() {
        let d = small(BehaviorSpec::medium(), 5);
        let stats = compute_norm_stats(&d);
        // Oracle: accumulate the union row by row, one dimension at a time.
        for dim in 0..d.state_dim() {
            let mut xs: Vec<f64> = d.states.column(dim).to_vec();
            xs.extend(d.next_states.column(dim).iter());
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            let std = var.sqrt().max(1e-3);
            assert!((stats.mean[dim] - mean).abs() < 1e-12);
            assert!((stats.std[dim] - std).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_states_hit_the_std_floor() {
        let mut d = small(BehaviorSpec::random(), 1);
        d.states.fill(0.25);
        d.next_states.fill(0.25);
        let stats = compute_norm_stats(&d);
        assert!(stats.std.iter().all(|&s| s == 1e-3));
        let normalized = stats.normalize_rows(&d.states);
        assert!(normalized.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_then_denormalize_is_identity() {
        let d = small(BehaviorSpec::medium(), 8);
        let stats = compute_norm_stats(&d);
        let round = stats.denormalize_rows(&stats.normalize_rows(&d.states));
        for (a, b) in round.iter().zip(d.states.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_match_dataset_rows() {
        let d = small(BehaviorSpec::medium(), 9);
        let mut s1 = Stream::derive(9, streams::BATCH);
        let mut s2 = Stream::derive(9, streams::BATCH);
        let b = sample_batch(&d, &mut s1, 64).unwrap();
        // Reconstruct the index sequence with a twin stream.
        let idx: Vec<usize> = (0..64).map(|_| s2.index(d.n())).collect();
        for (row, &i) in idx.iter().enumerate() {
            assert_eq!(b.states.row(row), d.states.row(i));
            assert_eq!(b.actions.row(row), d.actions.row(i));
            assert_eq!(b.rewards[row], d.rewards[i]);
            assert_eq!(b.next_states.row(row), d.next_states.row(i));
            assert_eq!(b.dones[row], d.dones[i] as f64);
        }
    }

    #[test]
    fn batch_size_bounds_are_enforced() {
        let d = small(BehaviorSpec::random(), 2);
        let mut s = Stream::derive(2, streams::BATCH);
        assert!(sample_batch(&d, &mut s, 0).is_err());
        assert!(sample_batch(&d, &mut s, d.n() + 1).is_err());
        assert!(sample_batch(&d, &mut s, d.n()).is_ok());
    }

    #[test]
    fn sampling_frequencies_are_near_uniform() {
        let d = small(BehaviorSpec::random(), 4);
        let mut s = Stream::derive(4, streams::BATCH);
        let mut counts = vec![0u32; d.n()];
        let draws = 1_000_000;
        for _ in 0..draws / 1000 {
            let idx: Vec<usize> = (0..1000).map(|_| s.index(d.n())).collect();
            for i in idx {
                counts[i] += 1;
            }
        }
        let expect = draws as f64 / d.n() as f64; // 1000 per index
        for &c in &counts {
            assert!(
                (c as f64 - expect).abs() < 0.05 * expect * 3.0,
                "count {c} too far from {expect}"
            );
        }
    }

    #[test]
    fn roundtrip_is_bit_identical_with_documented_size() {
        let d = small(BehaviorSpec::medium(), 7);
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.sbc1");
        dataset_serialize(&d, &path).unwrap();
        let loaded = dataset_deserialize(&path).unwrap();
        assert_eq!(d, loaded);

        let meta_len = serde_json::to_vec(&d.meta).unwrap().len();
        let payload = 1000 * (4 * 8 + 2 * 8 + 8 + 4 * 8) + 1000;
        let expect = 32 + payload + 4 + meta_len;
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, expect);
    }

    #[test]
    fn corruption_yields_distinct_errors() {
        let d = small(BehaviorSpec::random(), 6);
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.sbc1");
        dataset_serialize(&d, &path).unwrap();
        let original = std::fs::read(&path).unwrap();

        let mut bad_magic = original.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            dataset_deserialize(&path),
            Err(DatasetError::MagicMismatch)
        ));

        let mut bad_version = original.clone();
        bad_version[4] = 9;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            dataset_deserialize(&path),
            Err(DatasetError::UnsupportedVersion { got: 9 })
        ));

        let truncated = &original[..original.len() / 2];
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(
            dataset_deserialize(&path),
            Err(DatasetError::Truncated { .. })
        ));

        let mut flipped = original.clone();
        flipped[40] ^= 0xff; // inside the states payload
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(
            dataset_deserialize(&path),
            Err(DatasetError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn bootstrapped_batch_zeroes_dones() {
        let d = small(BehaviorSpec::random(), 12);
        let mut s = Stream::derive(12, streams::BATCH);
        let b = sample_batch(&d, &mut s, 500).unwrap().with_bootstrapped_time_limits();
        assert!(b.dones.iter().all(|&x| x == 0.0));
    }
}
