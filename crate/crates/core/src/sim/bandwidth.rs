//! Client bandwidth tiers, jitter and the per-round time model
//! `t = download + T·(c0 + c1·ρ) + ρA / min(B_up, C_server)`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ims::ByteAccounting;

pub const MB: f64 = 1e6;

/// Jitter rate at which the 95th-percentile multiplier is 2.
pub const DEFAULT_JITTER_RATE: f64 = std::f64::consts::LOG2_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    pub download_mbps: f64,
    pub upload_mbps: f64,
    /// Density a client in this tier starts from when stage 1 is skipped.
    pub preset_density: f64,
}

/// The five standard tiers, fastest first.
pub const STANDARD_TIERS: [Tier; 5] = [
    Tier {
        download_mbps: 20.0,
        upload_mbps: 5.0,
        preset_density: 1.0,
    },
    Tier {
        download_mbps: 10.0,
        upload_mbps: 2.5,
        preset_density: 0.5,
    },
    Tier {
        download_mbps: 4.0,
        upload_mbps: 1.0,
        preset_density: 0.2,
    },
    Tier {
        download_mbps: 2.0,
        upload_mbps: 0.5,
        preset_density: 0.1,
    },
    Tier {
        download_mbps: 1.0,
        upload_mbps: 0.25,
        preset_density: 0.05,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heterogeneity {
    #[default]
    High,
    Medium,
    Low,
}

impl Heterogeneity {
    /// Clients per tier for a 10-client federation.
    pub fn base_counts(self) -> [usize; 5] {
        match self {
            Heterogeneity::High => [1, 1, 1, 1, 6],
            Heterogeneity::Medium => [1, 1, 2, 3, 3],
            Heterogeneity::Low => [2, 2, 2, 2, 2],
        }
    }

    /// Clients per tier for `n` clients: the 10-client proportions scaled by
    /// largest remainder (ties to the faster tier).
    pub fn tier_counts(self, n: usize) -> [usize; 5] {
        let base = self.base_counts();
        let mut counts = [0; 5];
        let mut rems = [(0usize, 0usize); 5];
        for (t, &b) in base.iter().enumerate() {
            counts[t] = b * n / 10;
            rems[t] = (b * n % 10, t);
        }
        let missing = n - counts.iter().sum::<usize>();
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, t) in rems.iter().take(missing) {
            counts[t] += 1;
        }
        counts
    }

    /// Tier index of every client, fastest tiers first.
    pub fn assign(self, n: usize) -> Vec<usize> {
        self.tier_counts(n)
            .iter()
            .enumerate()
            .flat_map(|(t, &c)| std::iter::repeat_n(t, c))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthConfig {
    pub tiers: Vec<Tier>,
    pub server_upload_mbps: f64,
    /// Full-model size `A` in MB.
    pub model_mb: f64,
    pub jitter: bool,
    pub jitter_rate: f64,
    /// Per-step compute cost `c0 + c1·ρ` seconds.
    pub compute_c0: f64,
    pub compute_c1: f64,
    pub accounting: ByteAccounting,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        BandwidthConfig {
            tiers: STANDARD_TIERS.to_vec(),
            server_upload_mbps: 20.0,
            model_mb: 8.0,
            jitter: true,
            jitter_rate: DEFAULT_JITTER_RATE,
            compute_c0: 0.01,
            compute_c1: 0.04,
            accounting: ByteAccounting::default(),
        }
    }
}

impl BandwidthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tiers.len() != 5 {
            return Err(Error::Config(format!(
                "expected 5 bandwidth tiers, got {}",
                self.tiers.len()
            )));
        }
        let mut rates = vec![self.server_upload_mbps, self.model_mb, self.jitter_rate];
        for t in &self.tiers {
            rates.extend([t.download_mbps, t.upload_mbps, t.preset_density]);
        }
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config("bandwidth rates, sizes and densities must be > 0".into()));
        }
        if self.tiers.iter().any(|t| t.preset_density > 1.0) {
            return Err(Error::Config("preset densities must be ≤ 1".into()));
        }
        if !(self.compute_c0 >= 0.0 && self.compute_c1 >= 0.0) {
            return Err(Error::Config("compute costs must be ≥ 0".into()));
        }
        if self.accounting.bytes_per_scalar == 0 {
            return Err(Error::Config("bytes_per_scalar must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn model_bytes(&self) -> f64 {
        self.model_mb * MB
    }

    pub fn jitter_model(&self) -> Jitter {
        if self.jitter {
            Jitter::LogExponential { rate: self.jitter_rate }
        } else {
            Jitter::Off
        }
    }

    /// Profile of a client in tier `tier`.
    pub fn profile(&self, tier: usize) -> BandwidthProfile {
        let t = self.tiers[tier];
        BandwidthProfile {
            download_mbps: t.download_mbps,
            upload_mbps: t.upload_mbps,
            server_upload_mbps: self.server_upload_mbps,
            model_bytes: self.model_bytes(),
            jitter: self.jitter_model(),
            compute_c0: self.compute_c0,
            compute_c1: self.compute_c1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jitter {
    Off,
    /// `exp(E) / exp(median E)` with `E ~ Exp(rate)`; median multiplier 1.
    LogExponential {
        rate: f64,
    },
}

impl Jitter {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Jitter::Off => 1.0,
            Jitter::LogExponential { rate } => {
                let e: f64 = Exp::new(rate).expect("rate validated > 0").sample(rng);
                (e - std::f64::consts::LN_2 / rate).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthProfile {
    pub download_mbps: f64,
    pub upload_mbps: f64,
    pub server_upload_mbps: f64,
    pub model_bytes: f64,
    pub jitter: Jitter,
    pub compute_c0: f64,
    pub compute_c1: f64,
}

impl BandwidthProfile {
    /// Effective upload rate in bytes/s: the client link capped by the server.
    pub fn upload_rate(&self) -> f64 {
        self.upload_mbps.min(self.server_upload_mbps) * MB
    }

    pub fn download_rate(&self) -> f64 {
        self.download_mbps * MB
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTime {
    pub download: f64,
    pub compute: f64,
    pub upload: f64,
}

impl RoundTime {
    pub fn total(&self) -> f64 {
        self.download + self.compute + self.upload
    }
}

/// Time for one round at density `rho` with `download_bytes` to fetch and
/// `steps` local steps. Jitter is drawn for the download first, then the
/// upload.
pub fn round_time<R: Rng + ?Sized>(
    profile: &BandwidthProfile,
    rho: f64,
    download_bytes: f64,
    steps: usize,
    rng: &mut R,
) -> Result<RoundTime> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("density {rho} not in (0, 1]")));
    }
    let download = download_bytes / profile.download_rate() * profile.jitter.sample(rng);
    let upload = rho * profile.model_bytes / profile.upload_rate() * profile.jitter.sample(rng);
    let compute = steps as f64 * (profile.compute_c0 + profile.compute_c1 * rho);
    Ok(RoundTime {
        download,
        compute,
        upload,
    })
}
