//! Acceptance suite: one PASS/FAIL line per criterion on stderr.
//! `cargo test --release --test acceptance`

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rom_uq::config::PipelineConfig;
use rom_uq::fom::{solve_steady_ns, FlowState, ParameterPoint, SolverSettings};
use rom_uq::linalg::{dot, norm2};
use rom_uq::mesh::{Arity, Bc, CellField, MeshSpec, Rect, StructuredMesh};
use rom_uq::pce::{design_matrix, fit, gauss_hermite, hermite, multi_indices};
use rom_uq::pipeline::{self, OfflineArtifacts, OfflineSummary, UqOutcome};
use rom_uq::pod::{cumulative_energy, pod_modes, BasisKind, SnapshotSet};
use rom_uq::rom::{assemble_operators, relative_momentum_residual, solve_reduced, ReducedOperators, NEWTON_TOL};
use rom_uq::sampling::{lhc_gaussian, lhc_gaussian_matrix, merge_groups, reference_training_groups, Standardization};
use statrs::distribution::{ContinuousCDF, Normal};

const JOBS: usize = 4;

struct Campaign {
    _dir: tempfile::TempDir,
    cfg: PipelineConfig,
    offline: OfflineSummary,
    offline_time: Duration,
    art: OfflineArtifacts,
    uq: UqOutcome,
    uq_time: Duration,
}

/// Default desk-scale configuration, offline + UQ, computed once per test
/// binary.
fn campaign() -> &'static Campaign {
    static C: OnceLock<Campaign> = OnceLock::new();
    C.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig { output_dir: dir.path().to_path_buf(), ..PipelineConfig::default() };
        let t = Instant::now();
        let offline = pipeline::run_offline(&cfg, JOBS).expect("offline stage");
        let offline_time = t.elapsed();
        let art = pipeline::load_offline(&cfg).expect("offline artifacts");
        let t = Instant::now();
        let uq = pipeline::run_uq(&cfg, JOBS).expect("uq stage");
        let uq_time = t.elapsed();
        Campaign { _dir: dir, cfg, offline, offline_time, art, uq, uq_time }
    })
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn desk_mesh() -> StructuredMesh {
    StructuredMesh::build(&PipelineConfig::default().mesh).unwrap()
}

fn criterion_1_poiseuille() -> Verdict {
    let (length, height, re) = (10.0, 1.0, 50.0);
    let mesh = StructuredMesh::build(&MeshSpec { length, height, nx: 64, ny: 32, obstacle: None }).unwrap();
    let mu = ParameterPoint::new(0.0, 1.0).unwrap();
    let nu = mu.speed * height / re;
    let t = Instant::now();
    let state = solve_steady_ns(&mesh, &mu, nu, &SolverSettings::default()).unwrap();
    let elapsed = t.elapsed();
    let (dx, dy) = mesh.spacing();
    let i = ((0.8 * length) / dx) as usize;
    let peak = 1.5 * mu.speed;
    let mut dev = 0.0f64;
    for j in 0..32 {
        let y = (j as f64 + 0.5) * dy;
        let exact = 6.0 * mu.speed * y * (height - y) / (height * height);
        let c = mesh.cell_at(i, j).unwrap();
        dev = dev.max((state.velocity.value(c, 0) - exact).abs() / peak);
    }
    verdict(
        state.converged && dev <= 0.02 && elapsed <= Duration::from_secs(60),
        format!("max deviation {:.3}% of peak, {} iterations, {:.1} s", 100.0 * dev, state.iterations, elapsed.as_secs_f64()),
    )
}

fn criterion_2_symmetry() -> Verdict {
    let cfg = PipelineConfig::default();
    let mesh = desk_mesh();
    let cl = |alpha: f64| {
        let s = solve_steady_ns(&mesh, &ParameterPoint::new(alpha, 1.0).unwrap(), cfg.nu, &cfg.solver).unwrap();
        assert!(s.converged, "alpha {alpha} did not converge");
        s.lift(&mesh, cfg.chord).unwrap()
    };
    let c0 = cl(0.0);
    let mut pass = c0.abs() <= 5e-3;
    let mut detail = format!("Cl(0) = {c0:.2e}");
    for a in [2.0, 5.0] {
        let (p, m) = (cl(a), cl(-a));
        pass &= (p + m).abs() <= 1e-3;
        let _ = write!(detail, "; Cl(+{a}) = {p:.4}, Cl(-{a}) = {m:.4}, sum {:.1e}", p + m);
    }
    verdict(pass, detail)
}

fn random_fields(mesh: &StructuredMesh, count: usize, seed: u64) -> Vec<CellField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bcs = vec![Bc::ZeroGradient; mesh.patches().len()];
    (0..count)
        .map(|_| {
            let v = (0..2 * mesh.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            CellField::new(mesh, Arity::Vector, v, bcs.clone()).unwrap()
        })
        .collect()
}

fn criterion_3_pod() -> Verdict {
    let mesh = StructuredMesh::build(&MeshSpec { length: 2.0, height: 1.0, nx: 12, ny: 6, obstacle: None }).unwrap();
    let fields = random_fields(&mesh, 20, 3);
    let snaps = SnapshotSet::new(fields.clone(), vec![None; 20]).unwrap();
    let mut worst_ortho = 0.0f64;
    let mut worst_energy = 0.0f64;
    let mut worst_cum = 0.0f64;
    let mut monotone = true;
    for n in [1, 5, 12, 19] {
        let basis = pod_modes(&mesh, &snaps, n, BasisKind::Velocity).unwrap();
        worst_ortho = worst_ortho.max(basis.orthonormality_defect(&mesh).unwrap());
        let mut lhs = 0.0;
        for f in &fields {
            let r = f.lin_comb(1.0, &basis.expand(&basis.project(&mesh, f).unwrap()).unwrap(), -1.0).unwrap();
            lhs += mesh.inner_product(&r, &r).unwrap();
        }
        let rhs = 20.0 * basis.eigenvalues[n..].iter().sum::<f64>();
        worst_energy = worst_energy.max((lhs - rhs).abs() / rhs);
        let cum = cumulative_energy(&basis).unwrap();
        monotone &= cum.windows(2).all(|w| w[1] >= w[0]);
        worst_cum = worst_cum.max((cum.last().unwrap() - 1.0).abs());
    }
    let c = campaign();
    let b = &c.art.basis;
    for basis in [&b.velocity, &b.pressure, &b.supremizers] {
        worst_ortho = worst_ortho.max(basis.orthonormality_defect(&c.art.mesh).unwrap());
    }
    verdict(
        worst_ortho <= 1e-8 && worst_energy <= 1e-6 && monotone && worst_cum <= 1e-12,
        format!(
            "orthonormality defect {worst_ortho:.1e}, energy identity rel. error {worst_energy:.1e}, terminal cumulative |1 - c| {worst_cum:.1e}, nondecreasing {monotone}"
        ),
    )
}

fn reproduction_error(art: &OfflineArtifacts, cfg: &PipelineConfig) -> f64 {
    let points: Vec<ParameterPoint> = art.training.iter().map(|t| t.0).collect();
    let rows = art.evaluate(&points, cfg.nu, cfg.chord, JOBS).unwrap();
    let rom: Vec<f64> = rows.iter().map(|r| r.cl.expect("reduced lift")).collect();
    rom_uq::pce::relative_error(&art.training_cl, &rom).unwrap()
}

fn criterion_4_reproduction() -> Verdict {
    let c = campaign();
    let alphas: Vec<f64> = c.art.training.iter().map(|t| t.0.alpha_deg).collect();
    let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t = Instant::now();
    let e10 = reproduction_error(&c.art.truncated(10, 10, 10).unwrap(), &c.cfg);
    let e20 = reproduction_error(&c.art.truncated(20, 10, 10).unwrap(), &c.cfg);
    let runtime = c.offline_time + t.elapsed();
    verdict(
        c.offline.converged >= 60 && lo <= -10.0 && hi >= 10.0 && e20 <= e10 && e20 <= 10.0 && runtime <= Duration::from_secs(1800),
        format!(
            "{} snapshots over alpha [{lo:.1}, {hi:.1}] deg; error (10,10,10) {e10:.4}%, (20,10,10) {e20:.4}%; {:.1} s",
            c.offline.converged,
            runtime.as_secs_f64()
        ),
    )
}

/// Momentum residual on free rows and continuity residual, evaluated
/// directly from the stored operator entries.
fn independent_residual(ops: &ReducedOperators, a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = ops.n();
    let mut r = Vec::with_capacity(n - 2 + ops.n_p);
    let mut nu_ba = Vec::with_capacity(n - 2);
    for i in 2..n {
        let ba = ops.nu * dot(ops.b.row(i), a);
        let mut conv = 0.0;
        for j in 0..n {
            for k in 0..n {
                conv += ops.c(i, j, k) * a[j] * a[k];
            }
        }
        r.push(ba - conv - dot(ops.h.row(i), b));
        nu_ba.push(ba);
    }
    for l in 0..ops.n_p {
        r.push(dot(ops.p.row(l), a));
    }
    (norm2(&r), NEWTON_TOL * norm2(&nu_ba).max(1.0))
}

fn criterion_5_reduced_solver() -> Verdict {
    let c = campaign();
    let ops = &c.art.ops;
    let (mut worst_ratio, mut max_iter, mut failures) = (0.0f64, 0usize, 0usize);
    for (mu, a0, b0) in &c.art.training {
        let s = solve_reduced(ops, mu, Some((a0, b0))).unwrap();
        if !s.converged {
            failures += 1;
            continue;
        }
        assert_eq!((s.a[0], s.a[1]), (mu.mu_x(), mu.mu_y()));
        let (r, tol) = independent_residual(ops, &s.a, &s.b);
        worst_ratio = worst_ratio.max(r / tol);
        max_iter = max_iter.max(s.iterations);
    }
    let online = c.uq.predictions.fom.len();
    verdict(
        failures == 0 && worst_ratio <= 1.0 && max_iter <= 5,
        format!(
            "{} training solves, {failures} unconverged, worst residual/tolerance {worst_ratio:.2e}, max Newton iterations {max_iter}; {online} UQ test solves converged",
            c.art.training.len()
        ),
    )
}

fn criterion_6_pce_exactness() -> Verdict {
    let st = Standardization::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let zeta = lhc_gaussian_matrix(20, &[0.0, 0.0], &[1.0, 1.0], 9).unwrap();
    let y: Vec<f64> = zeta.iter().map(|z| 1.0 + 2.0 * z[0] + 3.0 * z[1] + 0.5 * z[0] * z[1]).collect();
    let basis = multi_indices(2, 2).unwrap();
    let model = fit(&basis, &design_matrix(&zeta, &basis).unwrap(), &y, st).unwrap();
    let expected = [1.0, 2.0, 3.0, 0.0, 0.5, 0.0];
    let coef_err = model.coefficients.as_slice().iter().zip(expected).map(|(c, e)| (c - e).abs()).fold(0.0, f64::max);
    let binom = |n: usize, k: usize| (1..=k).fold(1usize, |acc, i| acc * (n + 1 - i) / i);
    let mut counts_ok = true;
    for n in 1..=5 {
        for p in 0..=6 {
            counts_ok &= multi_indices(n, p).unwrap().len() == binom(p + n, p);
        }
    }
    verdict(coef_err <= 1e-10 && counts_ok, format!("max coefficient error {coef_err:.1e}; basis counts match for n <= 5, p <= 6: {counts_ok}"))
}

fn criterion_7_hermite() -> Verdict {
    let (x, w) = gauss_hermite(64).unwrap();
    let mut worst = 0.0f64;
    for a in 0..=6 {
        for b in 0..=6 {
            let e: f64 = x.iter().zip(&w).map(|(x, w)| w * hermite(a, *x) * hermite(b, *x)).sum();
            let fact = (1..=a).product::<usize>() as f64;
            let exact = if a == b { fact } else { 0.0 };
            worst = worst.max((e - exact).abs());
        }
    }
    verdict(worst <= 1e-10, format!("max |E[He_a He_b] - a! delta_ab| = {worst:.1e}"))
}

fn one_per_stratum(values: &[f64], mean: f64, std: f64) -> bool {
    let normal = Normal::new(mean, std).unwrap();
    let n = values.len();
    let mut seen = vec![false; n];
    for v in values {
        let k = ((normal.cdf(*v) * n as f64) as usize).min(n - 1);
        if seen[k] {
            return false;
        }
        seen[k] = true;
    }
    true
}

fn criterion_8_lhc() -> Verdict {
    let (mean, std) = ([3.0, 50.0], [2.0, 7.0]);
    let mut strat = true;
    let mut det = true;
    for n in [4, 100] {
        for seed in [1, 42, 2024] {
            let s = lhc_gaussian(n, mean, std, seed).unwrap();
            let a: Vec<f64> = s.points.iter().map(|p| p.alpha_deg).collect();
            let u: Vec<f64> = s.points.iter().map(|p| p.speed).collect();
            strat &= one_per_stratum(&a, mean[0], std[0]) && one_per_stratum(&u, mean[1], std[1]);
            det &= s == lhc_gaussian(n, mean, std, seed).unwrap();
        }
    }
    let groups = reference_training_groups();
    let set = merge_groups(&groups, 5).unwrap();
    det &= set == merge_groups(&groups, 5).unwrap();
    let sizes = [90, 20, 20, 50, 50, 40, 40, 40, 40, 20, 20, 50, 40];
    let counts: Vec<usize> = (0..groups.len()).map(|g| set.groups.iter().filter(|&&k| k == g).count()).collect();
    let composition = set.len() == 520 && counts == sizes;
    verdict(
        strat && det && composition,
        format!("one sample per stratum {strat}; deterministic {det}; 520-sample composition {composition} ({} samples)", set.len()),
    )
}

fn criterion_9_table() -> Verdict {
    let c = campaign();
    let r = &c.uq.report;
    let get = |a, b| r.error(a, b).unwrap_or(f64::NAN);
    let (rom, pf, pr_rom, pr_fom) = (get("FOM", "ROM"), get("FOM", "PCE-on-FOM"), get("ROM", "PCE-on-ROM"), get("FOM", "PCE-on-ROM"));
    let rows_ok = r.rows.len() == 4 && r.rows.iter().all(|x| x.error_percent >= 0.0);
    let bound = pr_fom <= pf + 1.5 * rom;
    let ratio = pr_rom / pf;
    let factor = (0.5..=2.0).contains(&ratio);
    let runtime = c.offline_time + c.uq_time;
    verdict(
        rows_ok && bound && factor && runtime <= Duration::from_secs(2700),
        format!(
            "FOM/ROM {rom:.4}%, FOM/PCE-FOM {pf:.4}%, ROM/PCE-ROM {pr_rom:.4}%, FOM/PCE-ROM {pr_fom:.4}% (bound {:.4}%), ratio {ratio:.2}; {:.1} s",
            pf + 1.5 * rom,
            runtime.as_secs_f64()
        ),
    )
}

fn toy_config(dir: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.output_dir = dir.to_path_buf();
    cfg.mesh = MeshSpec { length: 3.0, height: 1.0, nx: 24, ny: 8, obstacle: Some(Rect { x_min: 0.5, x_max: 0.875, y_min: 0.375, y_max: 0.625 }) };
    cfg.offline.n_u = 6;
    cfg.offline.n_p = 4;
    cfg.offline.n_sup = 4;
    cfg.offline.write_snapshots = false;
    cfg.offline.groups.truncate(1);
    cfg.offline.groups[0].size = 10;
    cfg.uq.degree = 2;
    cfg.uq.train = 12;
    cfg.uq.test = 10;
    cfg
}

fn criterion_10_determinism() -> Verdict {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let cfg = toy_config(dir.path());
            pipeline::run_offline(&cfg, JOBS).unwrap();
            pipeline::run_uq(&cfg, JOBS).unwrap();
            std::fs::read(dir.path().join("uq/report.csv")).unwrap()
        })
        .collect();
    verdict(!runs[0].is_empty() && runs[0] == runs[1], format!("report.csv {} bytes, identical {}", runs[0].len(), runs[0] == runs[1]))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("FOM validation (Poiseuille)", criterion_1_poiseuille),
        ("lift symmetry", criterion_2_symmetry),
        ("POD correctness", criterion_3_pod),
        ("ROM reproduction trend", criterion_4_reproduction),
        ("reduced-solver contract", criterion_5_reduced_solver),
        ("PCE exactness", criterion_6_pce_exactness),
        ("Hermite orthogonality", criterion_7_hermite),
        ("LHC stratification", criterion_8_lhc),
        ("four-way error comparison", criterion_9_table),
        ("determinism", criterion_10_determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        // written past the test harness capture so the verdicts always show
        let _ = writeln!(std::io::stderr(), "{} criterion {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, k + 1, v.detail);
        if !v.pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

/// Reduced momentum residual of projected full-order states, with the
/// convection operator upwinded by each state's own face fluxes, decreases
/// as velocity modes are added.
#[test]
fn galerkin_consistency_improves_with_modes() {
    let c = campaign();
    let mesh = &c.art.mesh;
    let picks = [0usize, 17, 33, 50];
    let states: Vec<FlowState> = picks
        .iter()
        .map(|&k| solve_steady_ns(mesh, &c.art.training[k].0, c.cfg.nu, &c.cfg.solver).unwrap())
        .collect();
    let mut mean = [0.0f64; 3];
    for s in &states {
        let full = assemble_operators(mesh, &c.art.basis, c.cfg.nu, s.flux()).unwrap();
        for (slot, n) in [5, 10, 20].into_iter().enumerate() {
            let basis = c.art.basis.truncated(n, 10, 10).unwrap();
            let ops = full.truncated(n, 10, 10).unwrap();
            let (a, b) = basis.project_state(mesh, s).unwrap();
            mean[slot] += relative_momentum_residual(&ops, &a, &b) / states.len() as f64;
        }
    }
    println!("mean relative reduced residual for 5/10/20 modes: {:.3e}, {:.3e}, {:.3e}", mean[0], mean[1], mean[2]);
    assert!(mean[1] <= mean[0] && mean[2] <= mean[1], "{mean:?}");
}
