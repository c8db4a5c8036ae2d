use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use rom_uq::linalg::{lstsq, lu_solve, sym_eig, DenseMatrix, DenseVector};
use rom_uq::mesh::{Arity, Bc, CellField, MeshSpec, Rect, StructuredMesh};
use rom_uq::pce::{design_matrix, fit, multi_indices};
use rom_uq::pod::{cumulative_fractions, pod_modes, BasisKind, SnapshotSet};
use rom_uq::sampling::{lhc_gaussian, lhc_gaussian_matrix, merge_groups, SampleGroup, Standardization};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

fn mesh_spec() -> impl Strategy<Value = MeshSpec> {
    (2usize..12, 2usize..10, 0.5f64..4.0, 0.5f64..2.0, any::<bool>()).prop_map(|(nx, ny, length, height, hole)| {
        let obstacle = (hole && nx >= 5 && ny >= 5)
            .then(|| Rect { x_min: 0.35 * length, x_max: 0.6 * length, y_min: 0.35 * height, y_max: 0.6 * height });
        MeshSpec { length, height, nx, ny, obstacle }
    })
}

fn field(mesh: &StructuredMesh, values: &[f64]) -> CellField {
    let v: Vec<f64> = values.iter().cycle().take(2 * mesh.n_cells()).copied().collect();
    CellField::new(mesh, Arity::Vector, v, vec![Bc::ZeroGradient; mesh.patches().len()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigenpairs_reconstruct_symmetric_matrices(m in matrix(10, 10)) {
        let t = m.transpose();
        let a = DenseMatrix::new(10, 10, m.as_slice().iter().zip(t.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect()).unwrap();
        let e = sym_eig(&a).unwrap();
        let v = &e.vectors;
        let mut err = 0.0f64;
        for i in 0..10 {
            for j in 0..10 {
                let r: f64 = (0..10).map(|k| v[(i, k)] * e.values.as_slice()[k] * v[(j, k)]).sum();
                err += (r - a[(i, j)]).powi(2);
            }
        }
        prop_assert!(err.sqrt() <= 1e-9 * a.frobenius_norm());
    }

    #[test]
    fn least_squares_residual_is_orthogonal_to_columns(l in matrix(12, 4), y in prop::collection::vec(-1.0f64..1.0, 12)) {
        let l = DenseMatrix::new(12, 4, l.as_slice().iter().enumerate().map(|(k, v)| v + if k % 5 == 0 { 2.0 } else { 0.0 }).collect()).unwrap();
        let c = lstsq(&l, &DenseVector::new(y.clone()).unwrap()).unwrap();
        let r: Vec<f64> = l.matvec(c.as_slice()).iter().zip(&y).map(|(a, b)| a - b).collect();
        let ltr = l.transpose().matvec(&r);
        let scale = l.frobenius_norm() * DenseVector::new(y).unwrap().norm();
        prop_assert!(ltr.iter().all(|v| v.abs() <= 1e-9 * scale.max(1e-300)));
    }

    #[test]
    fn lu_round_trips_diagonally_dominant_systems(m in matrix(8, 8), x in prop::collection::vec(-1.0f64..1.0, 8)) {
        let a = DenseMatrix::new(8, 8, (0..64).map(|k| m.as_slice()[k] + if k % 9 == 0 { 10.0 } else { 0.0 }).collect()).unwrap();
        let b = DenseVector::new(a.matvec(&x)).unwrap();
        let got = lu_solve(&a, &b).unwrap();
        let err: f64 = got.as_slice().iter().zip(&x).map(|(g, e)| (g - e).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-9 * DenseVector::new(x).unwrap().norm().max(1e-12));
    }

    #[test]
    fn every_cell_surface_is_closed(spec in mesh_spec()) {
        let mesh = StructuredMesh::build(&spec).unwrap();
        for k in 0..mesh.n_cells() {
            let mut s = [0.0; 2];
            for &f in mesh.cell_faces(k) {
                let face = &mesh.faces()[f];
                let sign = mesh.orientation(f, k);
                s[0] += sign * face.area * face.normal[0];
                s[1] += sign * face.area * face.normal[1];
            }
            prop_assert!(s[0].abs() <= 1e-12 && s[1].abs() <= 1e-12);
        }
    }

    #[test]
    fn inner_product_is_positive_definite(spec in mesh_spec(), v in prop::collection::vec(-1.0f64..1.0, 1..40)) {
        let mesh = StructuredMesh::build(&spec).unwrap();
        let f = field(&mesh, &v);
        let ff = mesh.inner_product(&f, &f).unwrap();
        prop_assert!(ff >= 0.0);
        prop_assert_eq!(ff == 0.0, f.values().iter().all(|x| *x == 0.0));
        let z = f.scaled(0.0);
        prop_assert_eq!(mesh.inner_product(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_norm_survives_refinement(spec in mesh_spec(), c in prop::array::uniform2(-3.0f64..3.0)) {
        let coarse = StructuredMesh::build(&MeshSpec { obstacle: None, ..spec.clone() }).unwrap();
        let fine = StructuredMesh::build(&MeshSpec { nx: 2 * spec.nx, ny: 2 * spec.ny, obstacle: None, ..spec }).unwrap();
        let bcs = |m: &StructuredMesh| vec![Bc::ZeroGradient; m.patches().len()];
        let a = CellField::uniform(&coarse, &c, bcs(&coarse)).unwrap();
        let b = CellField::uniform(&fine, &c, bcs(&fine)).unwrap();
        let (x, y) = (coarse.inner_product(&a, &a).unwrap(), fine.inner_product(&b, &b).unwrap());
        prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
    }

    #[test]
    fn pod_orthonormality_and_energy_identity(
        ns in 2usize..8,
        keep in 1usize..8,
        v in prop::collection::vec(-1.0f64..1.0, 8 * 2 * 24),
    ) {
        let mesh = StructuredMesh::build(&MeshSpec { length: 1.5, height: 1.0, nx: 6, ny: 4, obstacle: None }).unwrap();
        let fields: Vec<CellField> = (0..ns).map(|k| field(&mesh, &v[k * 48..(k + 1) * 48])).collect();
        let snaps = SnapshotSet::new(fields.clone(), vec![None; ns]).unwrap();
        let n = keep.min(ns);
        let basis = pod_modes(&mesh, &snaps, n, BasisKind::Velocity).unwrap();
        prop_assert!(basis.orthonormality_defect(&mesh).unwrap() <= 1e-8);
        let kept = basis.len();
        let mut lhs = 0.0;
        for f in &fields {
            let p = basis.expand(&basis.project(&mesh, f).unwrap()).unwrap();
            let r = f.lin_comb(1.0, &p, -1.0).unwrap();
            lhs += mesh.inner_product(&r, &r).unwrap();
        }
        let rhs = ns as f64 * basis.eigenvalues[kept..].iter().sum::<f64>();
        let total = ns as f64 * basis.eigenvalues.iter().sum::<f64>();
        prop_assert!((lhs - rhs).abs() <= 1e-6 * rhs.max(1e-12 * total));
    }

    #[test]
    fn cumulative_fractions_end_at_one(v in prop::collection::vec(0.0f64..10.0, 1..20)) {
        prop_assume!(v.iter().sum::<f64>() > 0.0);
        let mut v = v;
        v.sort_by(|a, b| b.total_cmp(a));
        let c = cumulative_fractions(&v).unwrap();
        prop_assert!(c.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((c.last().unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pce_count_matches_binomial(n in 1usize..6, p in 0usize..7) {
        let binom = (1..=p).fold(1usize, |acc, i| acc * (n + i) / i);
        let set = multi_indices(n, p).unwrap();
        prop_assert_eq!(set.len(), binom);
        let mut sorted = set.indices.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), binom);
    }

    #[test]
    fn polynomial_data_is_recovered(p in 1usize..4, coef in prop::collection::vec(-2.0f64..2.0, 10), seed in 0u64..1000) {
        let basis = multi_indices(2, p).unwrap();
        let lower = multi_indices(2, p - 1).unwrap();
        let n = 2 * basis.len();
        let zeta = lhc_gaussian_matrix(n, &[0.0, 0.0], &[1.0, 1.0], seed).unwrap();
        // degree p - 1 data fitted at degree p: the top block must vanish
        let low = design_matrix(&zeta, &lower).unwrap();
        let y = low.matvec(&coef[..lower.len()]);
        let st = Standardization::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = fit(&basis, &design_matrix(&zeta, &basis).unwrap(), &y, st).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(m.training_residual <= 1e-9 * ynorm.max(1.0));
        for (idx, c) in basis.indices.iter().zip(m.coefficients.as_slice()) {
            if idx.iter().sum::<usize>() == p {
                prop_assert!(c.abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn lhc_is_stratified_and_deterministic(n in 1usize..200, seed in any::<u64>(), mean in 1.0f64..5.0, std in 0.01f64..0.3) {
        let s = lhc_gaussian(n, [0.0, mean], [3.0, std], seed).unwrap();
        prop_assert_eq!(&s, &lhc_gaussian(n, [0.0, mean], [3.0, std], seed).unwrap());
        for (vals, (m, sd)) in [
            (s.points.iter().map(|p| p.alpha_deg).collect::<Vec<_>>(), (0.0, 3.0)),
            (s.points.iter().map(|p| p.speed).collect::<Vec<_>>(), (mean, std)),
        ] {
            let normal = Normal::new(m, sd).unwrap();
            let mut strata: Vec<usize> = vals.iter().map(|v| ((normal.cdf(*v) * n as f64) as usize).min(n - 1)).collect();
            strata.sort();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn group_composition_is_exact(sizes in prop::collection::vec(1usize..30, 1..6), seed in any::<u64>()) {
        let groups: Vec<SampleGroup> = sizes.iter().enumerate()
            .map(|(g, &size)| SampleGroup { size, mean: [g as f64 * 10.0, 1.0], std: [2.0, 0.05] })
            .collect();
        let set = merge_groups(&groups, seed).unwrap();
        prop_assert_eq!(set.len(), sizes.iter().sum::<usize>());
        for (g, &size) in sizes.iter().enumerate() {
            prop_assert_eq!(set.groups.iter().filter(|&&k| k == g).count(), size);
        }
    }
}
