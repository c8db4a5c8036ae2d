//! Offline / online / UQ orchestration and artifact bookkeeping.
//!
//! Layout under the output directory:
//!
//! ```text
//! offline/  samples.csv fom_results.csv snapshots/ eigenvalues.csv
//!           basis.txt operators.txt projections.csv config.toml manifest.toml
//! online/   rom_results.csv manifest.toml
//! uq/       samples.csv fom_results.csv rom_results.csv pce_fom.txt pce_rom.txt
//!           predictions.csv report.csv manifest.toml
//! ```

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::fom::{self, solve_steady_ns, FlowState, ParameterPoint};
use crate::mesh::{write_fields_csv, StructuredMesh};
use crate::pce::{design_matrix, fit, multi_indices, relative_error, PceModel};
use crate::pod::{homogenize, pod_modes, supremizer_modes, write_energy_csv, BasisKind, LiftingPair, SnapshotSet};
use crate::rom::{assemble_operators, reconstruct, rom_lift, solve_reduced, ReducedBasis, ReducedOperators};
use crate::sampling::{lhc_gaussian, merge_groups, standardize, SampleSet, Standardization};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing or incomplete artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },
    #[error("[{stage}] solver failure: {message}")]
    Solver { stage: &'static str, message: String },
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Solver { .. } => 3,
            PipelineError::MissingArtifact { .. } => 4,
            PipelineError::Stage { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
    fn solver(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Display> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::Stage { stage, message: e.to_string() })
    }

    fn solver(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| PipelineError::Solver { stage, message: e.to_string() })
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub complete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path)
            .map_err(|e| PipelineError::MissingArtifact { path: path.clone(), reason: e.to_string() })?;
        toml::from_str(&text).map_err(|e| PipelineError::MissingArtifact { path, reason: e.to_string() })
    }

    /// Fails unless the stage completed and every listed file still has
    /// its recorded checksum.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        if !self.complete {
            return Err(PipelineError::MissingArtifact {
                path: dir.join("manifest.toml"),
                reason: format!("stage '{}' did not complete", self.stage),
            });
        }
        for a in &self.artifacts {
            let path = dir.join(&a.path);
            let sum = sha256_file(&path)
                .map_err(|e| PipelineError::MissingArtifact { path: path.clone(), reason: e.to_string() })?;
            if sum != a.sha256 {
                return Err(PipelineError::MissingArtifact { path, reason: "checksum mismatch".into() });
            }
        }
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Collects written files of one stage and emits its manifest.
struct StageDir {
    name: &'static str,
    dir: PathBuf,
    artifacts: Vec<ArtifactEntry>,
}

impl StageDir {
    fn create(root: &Path, name: &'static str) -> Result<Self> {
        let dir = root.join(name);
        fs::create_dir_all(&dir).stage(name)?;
        let _ = fs::remove_file(dir.join("manifest.toml"));
        Ok(Self { name, dir, artifacts: Vec::new() })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(rel)).stage(self.name)?;
        self.artifacts.push(ArtifactEntry { path: rel.to_string(), sha256 });
        Ok(())
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        fs::write(self.path(rel), text).stage(self.name)?;
        self.record(rel)
    }

    fn finish(&self, outcome: &Result<()>) -> Result<()> {
        let manifest = Manifest {
            stage: self.name.to_string(),
            complete: outcome.is_ok(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
            artifacts: self.artifacts.clone(),
        };
        let text = toml::to_string_pretty(&manifest).stage(self.name)?;
        fs::write(self.dir.join("manifest.toml"), text).stage(self.name)
    }

    /// Runs `body`, then writes a manifest flagged complete or incomplete.
    fn run<T>(mut self, body: impl FnOnce(&mut StageDir) -> Result<T>) -> Result<T> {
        let out = body(&mut self);
        let status = out.as_ref().map(|_| ()).map_err(|e| PipelineError::Stage { stage: self.name, message: e.to_string() });
        self.finish(&status)?;
        out
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot build worker pool: {e}")))
}

fn build_mesh(cfg: &PipelineConfig) -> Result<StructuredMesh> {
    StructuredMesh::build(&cfg.mesh).map_err(|e| PipelineError::Config(e.to_string()))
}

/// Full-order solver used by the campaigns; injectable for testing.
pub type FomSolver<'a> = dyn Fn(&StructuredMesh, &ParameterPoint) -> fom::Result<FlowState> + Sync + 'a;

fn default_solver(cfg: &PipelineConfig) -> impl Fn(&StructuredMesh, &ParameterPoint) -> fom::Result<FlowState> + Sync + '_ {
    move |mesh, mu| solve_steady_ns(mesh, mu, cfg.nu, &cfg.solver)
}

/// Outcome of one full-order sample.
#[derive(Debug, Clone)]
pub struct FomRecord {
    pub mu: ParameterPoint,
    pub cl: Option<f64>,
    pub status: &'static str,
    pub iterations: usize,
    pub momentum: f64,
    pub continuity: f64,
}

fn solve_campaign(
    mesh: &StructuredMesh,
    cfg: &PipelineConfig,
    points: &[ParameterPoint],
    jobs: usize,
    solver: &FomSolver,
) -> Result<Vec<(FomRecord, Option<FlowState>)>> {
    let pool = pool(jobs)?;
    let results: Vec<fom::Result<FlowState>> = pool.install(|| points.par_iter().map(|mu| solver(mesh, mu)).collect());
    let mut out = Vec::with_capacity(points.len());
    for (k, (mu, res)) in points.iter().zip(results).enumerate() {
        let rec = match res {
            Ok(state) if state.converged => {
                let r = state.final_residuals();
                let cl = state.lift(mesh, cfg.chord).solver("fom")?;
                (
                    FomRecord { mu: *mu, cl: Some(cl), status: "converged", iterations: state.iterations, momentum: r.momentum, continuity: r.continuity },
                    Some(state),
                )
            }
            Ok(state) => {
                let r = state.final_residuals();
                warn!("sample {k} (alpha={}, U={}) did not converge; excluded", mu.alpha_deg, mu.speed);
                (
                    FomRecord { mu: *mu, cl: None, status: "not_converged", iterations: state.iterations, momentum: r.momentum, continuity: r.continuity },
                    None,
                )
            }
            Err(e) => {
                warn!("sample {k} (alpha={}, U={}) failed: {e}; excluded", mu.alpha_deg, mu.speed);
                (
                    FomRecord { mu: *mu, cl: None, status: "failed", iterations: 0, momentum: f64::NAN, continuity: f64::NAN },
                    None,
                )
            }
        };
        out.push(rec);
    }
    Ok(out)
}

fn write_fom_csv(path: &Path, records: &[FomRecord]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "alpha_deg", "speed", "cl", "status", "iterations", "momentum_residual", "continuity_residual"])?;
    for (k, r) in records.iter().enumerate() {
        w.write_record([
            k.to_string(),
            fmt(r.mu.alpha_deg),
            fmt(r.mu.speed),
            r.cl.map(fmt).unwrap_or_default(),
            r.status.to_string(),
            r.iterations.to_string(),
            fmt(r.momentum),
            fmt(r.continuity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OfflineSummary {
    pub samples: usize,
    pub converged: usize,
    pub excluded: Vec<usize>,
    pub n_u: usize,
    pub n_p: usize,
    pub n_sup: usize,
    pub dir: PathBuf,
}

pub fn run_offline(cfg: &PipelineConfig, jobs: usize) -> Result<OfflineSummary> {
    run_offline_with(cfg, jobs, &default_solver(cfg))
}

/// Offline stage: training campaign, lifting, POD, supremizers and reduced
/// operators.
pub fn run_offline_with(cfg: &PipelineConfig, jobs: usize, solver: &FomSolver) -> Result<OfflineSummary> {
    cfg.validate().map_err(PipelineError::Config)?;
    let mesh = build_mesh(cfg)?;
    StageDir::create(&cfg.output_dir, "offline")?.run(|st| {
        st.write_text("config.toml", &cfg.to_toml())?;
        let samples = merge_groups(&cfg.offline.groups, cfg.seed).map_err(|e| PipelineError::Config(e.to_string()))?;
        samples.write_csv(&st.path("samples.csv")).stage("sampling")?;
        st.record("samples.csv")?;
        info!("offline: solving {} training samples", samples.len());

        let results = solve_campaign(&mesh, cfg, &samples.points, jobs, solver)?;
        let records: Vec<FomRecord> = results.iter().map(|r| r.0.clone()).collect();
        write_fom_csv(&st.path("fom_results.csv"), &records).stage("fom")?;
        st.record("fom_results.csv")?;
        let excluded: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.cl.is_none()).map(|(k, _)| k).collect();
        let kept: Vec<(usize, FlowState)> =
            results.into_iter().enumerate().filter_map(|(k, (_, s))| s.map(|s| (k, s))).collect();
        if !excluded.is_empty() {
            warn!("offline: {} of {} samples excluded: {:?}", excluded.len(), samples.len(), excluded);
        }
        let need = cfg.offline.n_u.max(cfg.offline.n_p);
        if kept.len() < need {
            return Err(PipelineError::Solver {
                stage: "fom",
                message: format!("only {} of {} samples converged, {need} needed for the requested modes", kept.len(), samples.len()),
            });
        }
        if cfg.offline.write_snapshots {
            fs::create_dir_all(st.path("snapshots")).stage("fom")?;
            for (k, s) in &kept {
                let rel = format!("snapshots/sample_{k:04}.csv");
                write_fields_csv(&st.path(&rel), &mesh, &[("u", &s.velocity), ("p", &s.pressure)]).stage("fom")?;
                st.record(&rel)?;
            }
        }

        let params: Vec<ParameterPoint> = kept.iter().map(|(_, s)| s.mu).collect();
        let lifting = LiftingPair::compute(&mesh).solver("lifting")?;
        let velocity = SnapshotSet::with_params(kept.iter().map(|(_, s)| s.velocity.clone()).collect(), &params).stage("pod")?;
        let pressure = SnapshotSet::with_params(kept.iter().map(|(_, s)| s.pressure.clone()).collect(), &params).stage("pod")?;
        let homogenized = homogenize(&mesh, &velocity, &lifting).stage("pod")?;
        let vb = pod_modes(&mesh, &homogenized, cfg.offline.n_u, BasisKind::Velocity).stage("pod")?;
        let pb = pod_modes(&mesh, &pressure, cfg.offline.n_p, BasisKind::Pressure).stage("pod")?;
        let sb = supremizer_modes(&mesh, &pb, cfg.offline.n_sup.min(pb.len())).stage("supremizers")?;
        if pb.len() > sb.len() {
            return Err(PipelineError::Solver {
                stage: "supremizers",
                message: format!("{} pressure modes but only {} supremizers", pb.len(), sb.len()),
            });
        }
        write_energy_csv(&st.path("eigenvalues.csv"), &vb, &pb, &sb).stage("pod")?;
        st.record("eigenvalues.csv")?;
        let basis = ReducedBasis { lifting, velocity: vb, supremizers: sb, pressure: pb };
        info!("offline: basis sizes n_u={} n_p={} n_sup={}", basis.n_u(), basis.n_p(), basis.n_sup());

        let mut reference = vec![0.0; mesh.faces().len()];
        for (_, s) in &kept {
            for (r, f) in reference.iter_mut().zip(s.flux()) {
                *r += f;
            }
        }
        reference.iter_mut().for_each(|r| *r /= kept.len() as f64);
        let ops = assemble_operators(&mesh, &basis, cfg.nu, &reference).stage("operators")?;
        basis.save(&st.path("basis.txt")).stage("operators")?;
        st.record("basis.txt")?;
        st.write_text("operators.txt", &ops.to_text())?;

        let mut w = csv::Writer::from_path(st.path("projections.csv")).stage("operators")?;
        let mut header = vec!["index".to_string(), "alpha_deg".into(), "speed".into()];
        header.extend((0..ops.n()).map(|i| format!("a{i}")));
        header.extend((0..ops.n_p).map(|i| format!("b{i}")));
        w.write_record(&header).stage("operators")?;
        for (k, s) in &kept {
            let (a, b) = basis.project_state(&mesh, s).stage("operators")?;
            let mut rec = vec![k.to_string(), fmt(s.mu.alpha_deg), fmt(s.mu.speed)];
            rec.extend(a.iter().chain(&b).map(|v| fmt(*v)));
            w.write_record(&rec).stage("operators")?;
        }
        w.flush().stage("operators")?;
        drop(w);
        st.record("projections.csv")?;

        Ok(OfflineSummary {
            samples: samples.len(),
            converged: kept.len(),
            excluded,
            n_u: basis.n_u(),
            n_p: basis.n_p(),
            n_sup: basis.n_sup(),
            dir: st.dir.clone(),
        })
    })
}

/// Offline products needed by the online and UQ stages.
pub struct OfflineArtifacts {
    pub mesh: StructuredMesh,
    pub basis: ReducedBasis,
    pub ops: ReducedOperators,
    /// Training parameters with their projected reduced coordinates.
    pub training: Vec<(ParameterPoint, Vec<f64>, Vec<f64>)>,
    /// FOM lift coefficients of the kept training samples, same order.
    pub training_cl: Vec<f64>,
}

fn read_csv(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let missing = |e: &dyn Display| PipelineError::MissingArtifact { path: path.to_path_buf(), reason: e.to_string() };
    let mut r = csv::Reader::from_path(path).map_err(|e| missing(&e))?;
    let headers = r.headers().map_err(|e| missing(&e))?.clone();
    let rows = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| missing(&e))?;
    Ok((headers, rows))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| PipelineError::MissingArtifact {
        path: path.to_path_buf(),
        reason: format!("no column '{name}'"),
    })
}

fn parse_num(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().map_err(|_| PipelineError::MissingArtifact { path: path.to_path_buf(), reason: format!("bad number {s:?}") })
}

pub fn load_offline(cfg: &PipelineConfig) -> Result<OfflineArtifacts> {
    let dir = cfg.output_dir.join("offline");
    Manifest::load(&dir)?.verify(&dir)?;
    let mesh = build_mesh(cfg)?;
    let missing = |p: &str, e: &dyn Display| PipelineError::MissingArtifact { path: dir.join(p), reason: e.to_string() };
    let basis = ReducedBasis::load(&dir.join("basis.txt"), &mesh).map_err(|e| missing("basis.txt", &e))?;
    let ops_text = fs::read_to_string(dir.join("operators.txt")).map_err(|e| missing("operators.txt", &e))?;
    let ops = ReducedOperators::from_text(&ops_text).map_err(|e| missing("operators.txt", &e))?;
    if ops.n_u != basis.n_u() || ops.n_sup != basis.n_sup() || ops.n_p != basis.n_p() {
        return Err(missing("operators.txt", &"operator sizes differ from the stored basis"));
    }

    let path = dir.join("projections.csv");
    let (h, rows) = read_csv(&path)?;
    let (ia, iu) = (column(&h, "alpha_deg", &path)?, column(&h, "speed", &path)?);
    let a0 = column(&h, "a0", &path)?;
    let b0 = column(&h, "b0", &path)?;
    let mut training = Vec::with_capacity(rows.len());
    let mut kept = Vec::with_capacity(rows.len());
    for row in &rows {
        let mu = ParameterPoint { alpha_deg: parse_num(&row[ia], &path)?, speed: parse_num(&row[iu], &path)? };
        let a = (a0..a0 + ops.n()).map(|c| parse_num(&row[c], &path)).collect::<Result<Vec<_>>>()?;
        let b = (b0..b0 + ops.n_p).map(|c| parse_num(&row[c], &path)).collect::<Result<Vec<_>>>()?;
        training.push((mu, a, b));
        kept.push(row[0].to_string());
    }
    let path = dir.join("fom_results.csv");
    let (h, rows) = read_csv(&path)?;
    let icl = column(&h, "cl", &path)?;
    let training_cl = rows
        .iter()
        .filter(|r| kept.iter().any(|k| k == &r[0]))
        .map(|r| parse_num(&r[icl], &path))
        .collect::<Result<Vec<_>>>()?;
    if training_cl.len() != training.len() {
        return Err(PipelineError::MissingArtifact { path, reason: "training results do not match projections".into() });
    }
    Ok(OfflineArtifacts { mesh, basis, ops, training, training_cl })
}

/// One reduced-model evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRow {
    pub mu: ParameterPoint,
    pub cl: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub extrapolated: bool,
    pub fom_cl: Option<f64>,
}

impl OfflineArtifacts {
    fn training_standardization(&self) -> Standardization {
        let n = self.training.len() as f64;
        let mut means = vec![0.0; 2];
        for (mu, _, _) in &self.training {
            means[0] += mu.alpha_deg / n;
            means[1] += mu.speed / n;
        }
        let mut stds = vec![0.0; 2];
        for (mu, _, _) in &self.training {
            stds[0] += (mu.alpha_deg - means[0]).powi(2) / n;
            stds[1] += (mu.speed - means[1]).powi(2) / n;
        }
        let stds = stds.into_iter().map(|v: f64| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardization { means, stds }
    }

    /// Keeps the leading modes of each family; stored projections are
    /// sliced to match.
    pub fn truncated(&self, n_u: usize, n_sup: usize, n_p: usize) -> Result<Self> {
        let basis = self.basis.truncated(n_u, n_sup, n_p).stage("operators")?;
        let ops = self.ops.truncated(n_u, n_sup, n_p).stage("operators")?;
        let nu0 = self.ops.n_u;
        let training = self
            .training
            .iter()
            .map(|(mu, a, b)| {
                let mut t = a[..2 + n_u].to_vec();
                t.extend_from_slice(&a[2 + nu0..2 + nu0 + n_sup]);
                (*mu, t, b[..n_p].to_vec())
            })
            .collect();
        Ok(Self { mesh: self.mesh.clone(), basis, ops, training, training_cl: self.training_cl.clone() })
    }

    /// Reduced solve from the nearest training projection, reconstruction
    /// and lift, for every query (in query order).
    pub fn evaluate(&self, queries: &[ParameterPoint], nu: f64, chord: f64, jobs: usize) -> Result<Vec<OnlineRow>> {
        let st = self.training_standardization();
        let zt: Vec<Vec<f64>> = self.training.iter().map(|(mu, _, _)| st.forward(&[mu.alpha_deg, mu.speed])).collect();
        let one = |mu: &ParameterPoint| -> OnlineRow {
            let z = st.forward(&[mu.alpha_deg, mu.speed]);
            let nearest = zt
                .iter()
                .enumerate()
                .map(|(k, t)| (k, (t[0] - z[0]).powi(2) + (t[1] - z[1]).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            let (_, a0, b0) = &self.training[nearest];
            let extrapolated = z.iter().any(|v| v.abs() > 3.0);
            let failed = |residual| OnlineRow { mu: *mu, cl: None, converged: false, iterations: 0, residual, extrapolated, fom_cl: None };
            let state = match solve_reduced(&self.ops, mu, Some((a0, b0))) {
                Ok(s) => s,
                Err(e) => {
                    warn!("reduced solve failed at alpha={}, U={}: {e}", mu.alpha_deg, mu.speed);
                    return failed(f64::NAN);
                }
            };
            let cl = reconstruct(&self.basis, &state)
                .ok()
                .and_then(|(u, p)| rom_lift(&self.mesh, &u, &p, mu, nu, chord).ok());
            OnlineRow {
                mu: *mu,
                cl,
                converged: state.converged,
                iterations: state.iterations,
                residual: state.residual,
                extrapolated,
                fom_cl: None,
            }
        };
        let pool = pool(jobs)?;
        Ok(pool.install(|| queries.par_iter().map(one).collect()))
    }
}

fn write_online_csv(path: &Path, rows: &[OnlineRow]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "alpha_deg", "speed", "cl_rom", "converged", "iterations", "residual", "extrapolated", "cl_fom"])?;
    for (k, r) in rows.iter().enumerate() {
        w.write_record([
            k.to_string(),
            fmt(r.mu.alpha_deg),
            fmt(r.mu.speed),
            r.cl.map(fmt).unwrap_or_default(),
            r.converged.to_string(),
            r.iterations.to_string(),
            fmt(r.residual),
            r.extrapolated.to_string(),
            r.fom_cl.map(fmt).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A query point with an optional full-order reference lift coefficient.
pub type Query = (ParameterPoint, Option<f64>);

/// Reads `alpha_deg,speed[,cl_fom]` query rows.
pub fn read_queries(path: &Path) -> Result<Vec<Query>> {
    let (h, rows) = read_csv(path).map_err(|e| match e {
        PipelineError::MissingArtifact { reason, .. } => PipelineError::Config(format!("cannot read queries {}: {reason}", path.display())),
        other => other,
    })?;
    let bad = |m: String| PipelineError::Config(format!("{}: {m}", path.display()));
    let find = |n: &str| h.iter().position(|c| c == n);
    let (ia, iu) = match (find("alpha_deg"), find("speed")) {
        (Some(a), Some(u)) => (a, u),
        _ => return Err(bad("query file needs alpha_deg and speed columns".into())),
    };
    let icl = find("cl_fom");
    rows.iter()
        .map(|r| {
            let num = |i: usize| r[i].trim().parse::<f64>().map_err(|_| bad(format!("bad number {:?}", &r[i])));
            let mu = ParameterPoint::new(num(ia)?, num(iu)?).map_err(|e| bad(e.to_string()))?;
            let cl = match icl {
                Some(i) if !r[i].trim().is_empty() => Some(num(i)?),
                _ => None,
            };
            Ok((mu, cl))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct OnlineReport {
    pub rows: Vec<OnlineRow>,
    /// L2 relative error [%] against the supplied references, over rows
    /// that have both values.
    pub error_percent: Option<f64>,
}

/// Online stage. Without queries the training samples are replayed with
/// their full-order lift as reference (reproduction test).
pub fn run_online(cfg: &PipelineConfig, jobs: usize, queries: Option<Vec<Query>>) -> Result<OnlineReport> {
    cfg.validate().map_err(PipelineError::Config)?;
    let art = load_offline(cfg)?;
    let queries: Vec<Query> = match queries {
        Some(q) => q,
        None => art.training.iter().zip(&art.training_cl).map(|((mu, _, _), cl)| (*mu, Some(*cl))).collect(),
    };
    StageDir::create(&cfg.output_dir, "online")?.run(|st| {
        let points: Vec<ParameterPoint> = queries.iter().map(|q| q.0).collect();
        let mut rows = art.evaluate(&points, cfg.nu, cfg.chord, jobs)?;
        for (r, q) in rows.iter_mut().zip(&queries) {
            r.fom_cl = q.1;
        }
        write_online_csv(&st.path("rom_results.csv"), &rows).stage("online")?;
        st.record("rom_results.csv")?;
        let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.fom_cl?, r.cl?))).collect();
        let error_percent = if pairs.is_empty() {
            None
        } else {
            let (f, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            relative_error(&f, &r).ok()
        };
        if let Some(e) = error_percent {
            info!("online: L2 relative error against full-order lift {e:.4}%");
        }
        Ok(OnlineReport { rows, error_percent })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub reference: String,
    pub candidate: String,
    pub error_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn error(&self, reference: &str, candidate: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.reference == reference && r.candidate == candidate).map(|r| r.error_percent)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference,candidate,error_percent\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.reference, r.candidate, fmt(r.error_percent)));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:<12} {:>12}\n", "reference", "candidate", "error [%]");
        for r in &self.rows {
            s.push_str(&format!("{:<10} {:<12} {:>12.4}\n", r.reference, r.candidate, r.error_percent));
        }
        s
    }
}

/// Test-split values of the four compared outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub points: Vec<ParameterPoint>,
    pub fom: Vec<f64>,
    pub rom: Vec<f64>,
    pub pce_fom: Vec<f64>,
    pub pce_rom: Vec<f64>,
}

pub fn comparison_report(p: &Predictions) -> Result<ComparisonReport> {
    let row = |reference: &str, candidate: &str, r: &[f64], c: &[f64]| -> Result<ComparisonRow> {
        Ok(ComparisonRow {
            reference: reference.into(),
            candidate: candidate.into(),
            error_percent: relative_error(r, c).stage("report")?,
        })
    };
    Ok(ComparisonReport {
        rows: vec![
            row("FOM", "ROM", &p.fom, &p.rom)?,
            row("FOM", "PCE-on-FOM", &p.fom, &p.pce_fom)?,
            row("ROM", "PCE-on-ROM", &p.rom, &p.pce_rom)?,
            row("FOM", "PCE-on-ROM", &p.fom, &p.pce_rom)?,
        ],
    })
}

/// Fits one expansion on the first `train` samples of FOM and of ROM
/// outputs and predicts the remaining ones.
pub fn uq_comparison(
    samples: &SampleSet,
    fom: &[f64],
    rom: &[f64],
    train: usize,
    degree: usize,
    standardization: &Standardization,
) -> Result<(ComparisonReport, PceModel, PceModel, Predictions)> {
    let n = samples.len();
    if fom.len() != n || rom.len() != n {
        return Err(PipelineError::Stage { stage: "pce", message: "output vectors do not match the sample set".into() });
    }
    let basis = multi_indices(2, degree).stage("pce")?;
    if train < basis.len() || train >= n {
        return Err(PipelineError::Config(format!(
            "{n} samples cannot be split into {train} training samples (at least {} needed) and a nonempty test set",
            basis.len()
        )));
    }
    let zeta: Vec<Vec<f64>> = match &samples.zeta {
        Some(z) => z.iter().map(|z| z.to_vec()).collect(),
        None => samples.coordinates().iter().map(|x| standardization.forward(x)).collect(),
    };
    let design = design_matrix(&zeta[..train], &basis).stage("pce")?;
    let pce_fom = fit(&basis, &design, &fom[..train], standardization.clone()).stage("pce")?;
    let pce_rom = fit(&basis, &design, &rom[..train], standardization.clone()).stage("pce")?;
    let predict = |m: &PceModel| zeta[train..].iter().map(|z| m.predict_standardized(z).value).collect::<Vec<_>>();
    let preds = Predictions {
        points: samples.points[train..].to_vec(),
        fom: fom[train..].to_vec(),
        rom: rom[train..].to_vec(),
        pce_fom: predict(&pce_fom),
        pce_rom: predict(&pce_rom),
    };
    let report = comparison_report(&preds)?;
    Ok((report, pce_fom, pce_rom, preds))
}

fn write_predictions(path: &Path, p: &Predictions) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "alpha_deg", "speed", "fom", "rom", "pce_fom", "pce_rom"])?;
    for k in 0..p.fom.len() {
        w.write_record([
            k.to_string(),
            fmt(p.points[k].alpha_deg),
            fmt(p.points[k].speed),
            fmt(p.fom[k]),
            fmt(p.rom[k]),
            fmt(p.pce_fom[k]),
            fmt(p.pce_rom[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a previous UQ full-order table if it covers exactly these samples.
fn cached_fom(path: &Path, points: &[ParameterPoint]) -> Option<Vec<f64>> {
    let (h, rows) = read_csv(path).ok()?;
    let (ia, iu, icl) = (column(&h, "alpha_deg", path).ok()?, column(&h, "speed", path).ok()?, column(&h, "cl", path).ok()?);
    if rows.len() != points.len() {
        return None;
    }
    rows.iter()
        .zip(points)
        .map(|(r, p)| {
            (r[ia] == fmt(p.alpha_deg) && r[iu] == fmt(p.speed)).then(|| r[icl].parse().ok()).flatten()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct UqOutcome {
    pub report: ComparisonReport,
    pub pce_fom: PceModel,
    pub pce_rom: PceModel,
    pub predictions: Predictions,
}

pub fn run_uq(cfg: &PipelineConfig, jobs: usize) -> Result<UqOutcome> {
    run_uq_with(cfg, jobs, &default_solver(cfg))
}

/// UQ stage: Gaussian bulk, full-order and reduced outputs, expansions fit
/// on the training split and the four-way comparison on the test split.
pub fn run_uq_with(cfg: &PipelineConfig, jobs: usize, solver: &FomSolver) -> Result<UqOutcome> {
    cfg.validate().map_err(PipelineError::Config)?;
    let art = load_offline(cfg)?;
    let u = &cfg.uq;
    let st_map = Standardization::new(u.mean.to_vec(), u.std.to_vec()).map_err(|e| PipelineError::Config(e.to_string()))?;
    StageDir::create(&cfg.output_dir, "uq")?.run(|st| {
        let samples = lhc_gaussian(u.train + u.test, u.mean, u.std, cfg.uq_seed()).map_err(|e| PipelineError::Config(e.to_string()))?;
        let samples = standardize(&samples, &st_map).stage("sampling")?;
        samples.write_csv(&st.path("samples.csv")).stage("sampling")?;
        st.record("samples.csv")?;

        let fom_path = st.path("fom_results.csv");
        let fom = match cached_fom(&fom_path, &samples.points) {
            Some(v) => {
                info!("uq: reusing cached full-order results");
                v
            }
            None => {
                info!("uq: solving {} full-order samples", samples.len());
                let results = solve_campaign(&art.mesh, cfg, &samples.points, jobs, solver)?;
                let records: Vec<FomRecord> = results.into_iter().map(|r| r.0).collect();
                write_fom_csv(&fom_path, &records).stage("fom")?;
                let failed: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.cl.is_none()).map(|(k, _)| k).collect();
                if !failed.is_empty() {
                    return Err(PipelineError::Solver { stage: "fom", message: format!("UQ samples {failed:?} did not converge") });
                }
                records.iter().map(|r| r.cl.unwrap()).collect()
            }
        };
        st.record("fom_results.csv")?;

        let mut rows = art.evaluate(&samples.points, cfg.nu, cfg.chord, jobs)?;
        for (r, f) in rows.iter_mut().zip(&fom) {
            r.fom_cl = Some(*f);
        }
        write_online_csv(&st.path("rom_results.csv"), &rows).stage("online")?;
        st.record("rom_results.csv")?;
        let failed: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.cl.is_none() || !r.converged).map(|(k, _)| k).collect();
        if !failed.is_empty() {
            return Err(PipelineError::Solver { stage: "online", message: format!("reduced solves failed for UQ samples {failed:?}") });
        }
        let rom: Vec<f64> = rows.iter().map(|r| r.cl.unwrap()).collect();

        let (report, pce_fom, pce_rom, predictions) = uq_comparison(&samples, &fom, &rom, u.train, u.degree, &st_map)?;
        st.write_text("pce_fom.txt", &pce_fom.to_text())?;
        st.write_text("pce_rom.txt", &pce_rom.to_text())?;
        write_predictions(&st.path("predictions.csv"), &predictions).stage("report")?;
        st.record("predictions.csv")?;
        st.write_text("report.csv", &report.to_csv())?;
        Ok(UqOutcome { report, pce_fom, pce_rom, predictions })
    })
}

/// Recomputes the comparison from `uq/predictions.csv` and checks it
/// against the stored `uq/report.csv`.
pub fn run_report(cfg: &PipelineConfig) -> Result<ComparisonReport> {
    let dir = cfg.output_dir.join("uq");
    Manifest::load(&dir)?.verify(&dir)?;
    let path = dir.join("predictions.csv");
    let (h, rows) = read_csv(&path)?;
    let col = |n: &str| column(&h, n, &path);
    let (ia, iu, i_f, i_r, i_pf, i_pr) = (col("alpha_deg")?, col("speed")?, col("fom")?, col("rom")?, col("pce_fom")?, col("pce_rom")?);
    let mut p = Predictions { points: vec![], fom: vec![], rom: vec![], pce_fom: vec![], pce_rom: vec![] };
    for r in &rows {
        p.points.push(ParameterPoint { alpha_deg: parse_num(&r[ia], &path)?, speed: parse_num(&r[iu], &path)? });
        p.fom.push(parse_num(&r[i_f], &path)?);
        p.rom.push(parse_num(&r[i_r], &path)?);
        p.pce_fom.push(parse_num(&r[i_pf], &path)?);
        p.pce_rom.push(parse_num(&r[i_pr], &path)?);
    }
    let report = comparison_report(&p)?;
    let stored = fs::read_to_string(dir.join("report.csv"))
        .map_err(|e| PipelineError::MissingArtifact { path: dir.join("report.csv"), reason: e.to_string() })?;
    if stored != report.to_csv() {
        warn!("stored report differs from the one recomputed from predictions.csv");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_rows_coincide_when_rom_equals_fom() {
        let samples = lhc_gaussian(40, [0.0, 1.0], [3.0, 0.05], 5).unwrap();
        let st = Standardization::new(vec![0.0, 1.0], vec![3.0, 0.05]).unwrap();
        let f: Vec<f64> = samples.points.iter().map(|p| 0.1 * p.alpha_deg + 0.01 * p.alpha_deg.powi(2) * p.speed).collect();
        let (report, pf, pr, _) = uq_comparison(&samples, &f, &f, 15, 2, &st).unwrap();
        assert_eq!(pf.coefficients.len(), 6);
        assert_eq!(pr.coefficients.len(), 6);
        assert_eq!(report.rows.len(), 4);
        let a = report.error("FOM", "PCE-on-FOM").unwrap();
        let b = report.error("FOM", "PCE-on-ROM").unwrap();
        assert!((a - b).abs() <= 1e-12);
        assert_eq!(report.error("FOM", "ROM").unwrap(), 0.0);
    }

    #[test]
    fn split_must_leave_test_samples() {
        let samples = lhc_gaussian(10, [0.0, 1.0], [3.0, 0.05], 5).unwrap();
        let st = Standardization::new(vec![0.0, 1.0], vec![3.0, 0.05]).unwrap();
        let f = vec![1.0; 10];
        assert!(matches!(uq_comparison(&samples, &f, &f, 10, 1, &st), Err(PipelineError::Config(_))));
        assert!(matches!(uq_comparison(&samples, &f, &f, 2, 1, &st), Err(PipelineError::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config(String::new()).exit_code(), 2);
        assert_eq!(PipelineError::Solver { stage: "fom", message: String::new() }.exit_code(), 3);
        assert_eq!(PipelineError::MissingArtifact { path: PathBuf::new(), reason: String::new() }.exit_code(), 4);
    }
}
