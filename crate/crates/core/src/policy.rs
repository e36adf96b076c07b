//! The actor: Gaussian action distribution around an MLP mean, action
//! squashing, and the binary snapshot format used for checkpoints and for
//! shipping policies to rollout workers.
//!
//! # Snapshot layout
//!
//! All integers and floats little-endian.
//!
//! | bytes          | field                                             |
//! |----------------|---------------------------------------------------|
//! | 4              | magic `XPOL`                                      |
//! | 2              | format version (`u16`, currently 1)               |
//! | 1              | algorithm tag (1 = PPO, 2 = DDPG)                 |
//! | 1              | reserved, zero                                    |
//! | 4              | training cycle (`u32`)                            |
//! | 2              | number of layer sizes `L` (`u16`)                 |
//! | 4·L            | layer sizes (`u32`)                               |
//! | 4·P            | parameters (`f32`), per layer weights then biases |
//! | 4              | `log_std` (`f32`)                                 |
//! | 4              | CRC-32 of every preceding byte                    |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{ShapeError, SnapshotError};
use crate::nn::Mlp;
use crate::signals::{StateVector, STATE_DIM};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"XPOL";
pub const SNAPSHOT_VERSION: u16 = 1;
/// Valve velocity at full actuator deflection, %/s.
pub const MAX_VALVE_VELOCITY: f64 = 50.0;
pub const POLICY_LAYERS: [usize; 5] = [STATE_DIM, 16, 16, 16, 1];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ppo,
    Ddpg,
}

impl Algorithm {
    pub fn tag(self) -> u8 {
        match self {
            Algorithm::Ppo => 1,
            Algorithm::Ddpg => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Algorithm::Ppo),
            2 => Some(Algorithm::Ddpg),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Ddpg => "ddpg",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "ddpg" => Ok(Algorithm::Ddpg),
            other => Err(format!("unknown algorithm {other:?} (expected ppo or ddpg)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution {
    pub mean: f64,
    pub std: f64,
}

impl ActionDistribution {
    pub fn new(mean: f64, std: f64) -> Self {
        debug_assert!(std > 0.0, "std must be positive");
        Self { mean, std }
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.std.ln())
    }

    pub fn log_prob(&self, action: f64) -> f64 {
        gaussian_log_prob(action, self.mean, self.std.ln())
    }
}

/// Draws `mean + std * z` with `z` from a generator seeded by `rng_seed`.
pub fn sample_action(dist: &ActionDistribution, rng_seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_action_with(dist, &mut rng)
}

pub fn sample_action_with<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    dist.mean + dist.std * z
}

pub fn mean_action(dist: &ActionDistribution) -> f64 {
    dist.mean
}

/// Maps the unbounded policy output onto a valve velocity in %/s.
pub fn scale_action(raw_action: f64) -> f64 {
    MAX_VALVE_VELOCITY * raw_action.tanh()
}

pub fn gaussian_log_prob(action: f64, mean: f64, log_std: f64) -> f64 {
    let z = (action - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * LN_2PI
}

pub fn gaussian_entropy(log_std: f64) -> f64 {
    0.5 + 0.5 * LN_2PI + log_std
}

/// `KL(old || new)` between two univariate Gaussians.
pub fn gaussian_kl(old_mean: f64, old_log_std: f64, new_mean: f64, new_log_std: f64) -> f64 {
    let var_ratio = (2.0 * (old_log_std - new_log_std)).exp();
    let diff = (old_mean - new_mean) * (-new_log_std).exp();
    new_log_std - old_log_std + 0.5 * (var_ratio + diff * diff) - 0.5
}

/// Everything a rollout worker needs to act: the actor network and the
/// state-independent spread of its action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub format_version: u16,
    pub algorithm: Algorithm,
    pub training_cycle: u32,
    actor: Mlp,
    log_std: f64,
}

impl PolicySnapshot {
    /// Parameters are rounded to `f32`, the precision of the serialized form.
    pub fn new(algorithm: Algorithm, mut actor: Mlp, log_std: f64, training_cycle: u32) -> Self {
        actor.quantize_f32();
        Self {
            format_version: SNAPSHOT_VERSION,
            algorithm,
            training_cycle,
            actor,
            log_std: f64::from(log_std as f32),
        }
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn log_std(&self) -> f64 {
        self.log_std
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std)
    }

    pub fn forward(&self, state: &StateVector) -> Result<f64, ShapeError> {
        self.actor.forward_scalar(state.as_slice())
    }

    pub fn distribution(&self, state: &StateVector) -> Result<ActionDistribution, ShapeError> {
        Ok(ActionDistribution::new(self.forward(state)?, self.log_std.exp()))
    }

    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.actor.sizes();
        let mut out = Vec::with_capacity(18 + 4 * sizes.len() + 4 * (self.actor.num_params() + 2));
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.push(self.algorithm.tag());
        out.push(0);
        out.extend_from_slice(&self.training_cycle.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u16).to_le_bytes());
        for s in sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for p in self.actor.params() {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.log_std as f32).to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = ByteReader::new(bytes);
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic(magic));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version(version));
        }
        if bytes.len() < 4 {
            return Err(SnapshotError::Truncated { needed: 4, have: bytes.len() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(SnapshotError::Checksum { stored, computed });
        }

        let tag = r.u8()?;
        let algorithm = Algorithm::from_tag(tag).ok_or(SnapshotError::AlgorithmTag(tag))?;
        let reserved = r.u8()?;
        if reserved != 0 {
            return Err(SnapshotError::Malformed(format!("reserved header byte is {reserved}")));
        }
        let training_cycle = r.u32()?;
        let n_sizes = r.u16()? as usize;
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            sizes.push(r.u32()? as usize);
        }
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(ShapeError::Layers(sizes).into());
        }
        // hostile headers may declare absurd layer sizes; never overflow
        let n_params = sizes
            .windows(2)
            .try_fold(0usize, |acc, w| w[0].checked_mul(w[1])?.checked_add(w[1])?.checked_add(acc));
        let expected_len = n_params.and_then(|n| n.checked_add(1)?.checked_mul(4)?.checked_add(r.pos + 4));
        let (Some(n_params), Some(expected_len)) = (n_params, expected_len) else {
            return Err(SnapshotError::Malformed(format!("layer sizes {sizes:?} overflow")));
        };
        if expected_len != bytes.len() {
            return Err(SnapshotError::Malformed(format!(
                "length {} does not match layer sizes {:?} (expected {})",
                bytes.len(),
                sizes,
                expected_len
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(f64::from(r.f32()?));
        }
        let log_std = f64::from(r.f32()?);
        Ok(Self {
            format_version: version,
            algorithm,
            training_cycle,
            actor: Mlp::from_params(&sizes, params)?,
            log_std,
        })
    }

    /// Writes `<path>` atomically (temporary file, then rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SnapshotError> {
        write_atomic(path.as_ref(), &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SnapshotError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.bytes.len() {
            return Err(SnapshotError::Truncated {
                needed: self.pos + n,
                have: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, SnapshotError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_snapshot(seed: u64, sizes: &[usize]) -> PolicySnapshot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::init(sizes, 1.0, &mut rng).unwrap();
        PolicySnapshot::new(Algorithm::Ppo, actor, 0.5f64.ln(), 42)
    }

    #[test]
    fn scale_action_examples() {
        assert_eq!(scale_action(0.0), 0.0);
        assert!((scale_action(100.0) - 50.0).abs() < 1e-12);
        assert!((scale_action(0.5) - 23.105_857_863_000_49).abs() < 1e-9);
    }

    #[test]
    fn mean_action_examples() {
        assert_eq!(mean_action(&ActionDistribution::new(0.3, 0.5)), 0.3);
        assert_eq!(mean_action(&ActionDistribution::new(0.0, 1.0)), 0.0);
    }

    #[test]
    fn degenerate_distribution_returns_mean() {
        let d = ActionDistribution::new(0.3, 1e-300);
        assert_eq!(sample_action(&d, 9), mean_action(&d));
    }

    #[test]
    fn sampling_is_seeded() {
        let d = ActionDistribution::new(0.0, 1.0);
        assert_eq!(sample_action(&d, 1234), sample_action(&d, 1234));
        assert_ne!(sample_action(&d, 1234), sample_action(&d, 1235));
    }

    #[test]
    fn monte_carlo_mean_is_near_zero() {
        let d = ActionDistribution::new(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_action_with(&d, &mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn entropy_closed_form() {
        let d = ActionDistribution::new(0.0, 2.0);
        let expected = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 4.0).ln();
        assert!((d.entropy() - expected).abs() < 1e-12);
        assert!(ActionDistribution::new(0.0, 1.0).entropy() < d.entropy());
    }

    #[test]
    fn log_prob_matches_density() {
        let d = ActionDistribution::new(0.2, 0.7);
        let a = -0.4;
        let density = (-(a - 0.2f64).powi(2) / (2.0 * 0.49)).exp() / (0.7 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((d.log_prob(a) - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_is_zero_and_positive_otherwise() {
        assert!(gaussian_kl(0.3, -0.5, 0.3, -0.5).abs() < 1e-15);
        assert!(gaussian_kl(0.3, -0.5, 0.1, -0.2) > 0.0);
    }

    #[test]
    fn serialized_length_from_parameter_count() {
        let snap = random_snapshot(3, &POLICY_LAYERS);
        let header = 4 + 2 + 1 + 1 + 4 + 2 + 4 * 5;
        let payload = 4 * (13 * 16 + 16 + 16 * 16 + 16 + 16 * 16 + 16 + 16 + 1 + 1);
        assert_eq!(snap.to_bytes().len(), header + payload + 4);
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let snap = random_snapshot(4, &POLICY_LAYERS);
        let mut bytes = snap.to_bytes();
        bytes[100] ^= 0x10;
        assert!(matches!(PolicySnapshot::from_bytes(&bytes), Err(SnapshotError::Checksum { .. })));
    }

    #[test]
    fn header_errors_are_distinct() {
        let snap = random_snapshot(5, &[2, 1]);
        let mut bad_magic = snap.to_bytes();
        bad_magic[0] = b'Y';
        assert!(matches!(PolicySnapshot::from_bytes(&bad_magic), Err(SnapshotError::BadMagic(_))));
        let mut bad_version = snap.to_bytes();
        bad_version[4] = 9;
        assert!(matches!(PolicySnapshot::from_bytes(&bad_version), Err(SnapshotError::Version(9))));
        assert!(matches!(PolicySnapshot::from_bytes(b"X"), Err(SnapshotError::Truncated { .. })));
    }

    #[test]
    fn forward_is_identical_after_transfer() {
        let snap = random_snapshot(6, &POLICY_LAYERS);
        let restored = PolicySnapshot::from_bytes(&snap.to_bytes()).unwrap();
        let s = StateVector([0.25; STATE_DIM]);
        assert_eq!(snap.forward(&s).unwrap().to_bits(), restored.forward(&s).unwrap().to_bits());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise_identity(seed in any::<u64>(), hidden in 1usize..20, depth in 0usize..3, cycle in any::<u32>(), log_std in -5.0f64..2.0) {
            let mut sizes = vec![STATE_DIM];
            sizes.extend(std::iter::repeat_n(hidden, depth));
            sizes.push(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let actor = Mlp::init(&sizes, 1.0, &mut rng).unwrap();
            let algo = if seed % 2 == 0 { Algorithm::Ppo } else { Algorithm::Ddpg };
            let snap = PolicySnapshot::new(algo, actor, log_std, cycle);
            let bytes = snap.to_bytes();
            let back = PolicySnapshot::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &snap);
            prop_assert_eq!(back.to_bytes(), bytes);
        }

        #[test]
        fn scaled_velocity_stays_inside_actuator_range(raw in -15.0f64..15.0) {
            prop_assert!(scale_action(raw).abs() < MAX_VALVE_VELOCITY);
        }

        #[test]
        fn entropy_increases_with_std(a in 1e-3f64..10.0, b in 1e-3f64..10.0) {
            prop_assume!(a < b);
            prop_assert!(ActionDistribution::new(0.0, a).entropy() < ActionDistribution::new(0.0, b).entropy());
        }
    }
}
