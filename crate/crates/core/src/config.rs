//! Pipeline configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fom::SolverSettings;
use crate::mesh::{MeshSpec, Rect};
use crate::pce::multi_indices;
use crate::sampling::SampleGroup;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; the offline groups use derived seeds, the UQ bulk uses
    /// `seed + 1`.
    pub seed: u64,
    /// Kinematic viscosity [m^2/s].
    pub nu: f64,
    /// Reference length for the lift coefficient [m].
    pub chord: f64,
    pub output_dir: PathBuf,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    pub offline: OfflineConfig,
    pub uq: UqConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineConfig {
    pub n_u: usize,
    pub n_p: usize,
    pub n_sup: usize,
    /// Write one full-field CSV per training snapshot.
    pub write_snapshots: bool,
    pub groups: Vec<SampleGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    /// Gaussian bulk in (alpha [deg], U [m/s]).
    pub mean: [f64; 2],
    pub std: [f64; 2],
    pub degree: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = |size, alpha, sa| SampleGroup { size, mean: [alpha, 1.0], std: [sa, 0.1] };
        Self {
            seed: 2024,
            nu: 0.01,
            chord: 0.2,
            output_dir: PathBuf::from("rom-uq-output"),
            mesh: MeshSpec {
                length: 3.0,
                height: 1.0,
                nx: 60,
                ny: 20,
                obstacle: Some(Rect { x_min: 0.65, x_max: 0.85, y_min: 0.4, y_max: 0.6 }),
            },
            solver: SolverSettings::default(),
            offline: OfflineConfig {
                n_u: 20,
                n_p: 10,
                n_sup: 10,
                write_snapshots: true,
                groups: vec![g(24, 0.0, 5.0), g(10, -6.0, 2.0), g(10, 6.0, 2.0), g(10, -9.0, 1.5), g(10, 9.0, 1.5)],
            },
            uq: UqConfig { mean: [0.0, 1.0], std: [3.0, 0.05], degree: 3, train: 100, test: 200 },
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn training_size(&self) -> usize {
        self.offline.groups.iter().map(|g| g.size).sum()
    }

    pub fn uq_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.nu > 0.0) {
            return Err(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.chord > 0.0) {
            return Err(format!("chord must be positive, got {}", self.chord));
        }
        let m = &self.mesh;
        if m.nx < 2 || m.ny < 2 || !(m.length > 0.0) || !(m.height > 0.0) {
            return Err("mesh needs nx, ny >= 2 and positive extents".into());
        }
        let o = &self.offline;
        if o.groups.is_empty() {
            return Err("offline.groups must not be empty".into());
        }
        for (k, g) in o.groups.iter().enumerate() {
            g.validate().map_err(|e| format!("offline group {k}: {e}"))?;
        }
        if o.n_u == 0 || o.n_p == 0 {
            return Err("offline.n_u and offline.n_p must be at least 1".into());
        }
        if o.n_p > o.n_sup {
            return Err(format!(
                "offline.n_p ({}) must not exceed offline.n_sup ({}) for a solvable reduced system",
                o.n_p, o.n_sup
            ));
        }
        let ns = self.training_size();
        if o.n_u > ns || o.n_p > ns {
            return Err(format!("mode counts ({}, {}) exceed the {ns} training samples", o.n_u, o.n_p));
        }
        let u = &self.uq;
        if u.std.iter().any(|s| !(*s > 0.0)) {
            return Err("uq.std entries must be positive".into());
        }
        let terms = multi_indices(2, u.degree).map_err(|e| e.to_string())?.len();
        if u.train < terms {
            return Err(format!("uq.train ({}) is smaller than the {terms} expansion terms of degree {}", u.train, u.degree));
        }
        if u.test == 0 {
            return Err("uq.test must be at least 1".into());
        }
        Ok(())
    }
}
