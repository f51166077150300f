use proptest::prelude::*;

use simpl::baselines::{l2_project, oc_update, OcConfig};
use simpl::fields::{
    bregman_divergence, bregman_divergence_latent, fermi_dirac_entropy, logit, sigmoid, AdmissibleParams,
    DensityField, LatentField,
};
use simpl::grid::{assemble_filter_operators, CartesianMesh, ElasticModel, FemSpaces, Material};
use simpl::linsolve::cg_solve_logged;
use simpl::simpl::{kkt_estimate, latent_step, volume_correct, KktVariant};

fn interior() -> impl Strategy<Value = f64> {
    1e-6..(1.0 - 1e-6)
}

fn m_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| b * a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn logit_inverts_sigmoid_where_representable(x in -14.0..14.0_f64) {
        prop_assert!((logit(sigmoid(x)).unwrap() - x).abs() <= 1e-9);
    }

    #[test]
    fn sigmoid_strictly_increasing(x in -30.0..30.0_f64, d in 1e-6..5.0_f64) {
        prop_assert!(sigmoid(x) < sigmoid(x + d));
    }

    #[test]
    fn divergence_matches_three_term_form(
        pairs in prop::collection::vec((interior(), 1e-3..(1.0 - 1e-3)), 1..20)
    ) {
        let n = pairs.len();
        let vols = vec![1.0 / n as f64; n];
        let rho = DensityField::new(pairs.iter().map(|p| p.0).collect(), vols.clone()).unwrap();
        let q = DensityField::new(pairs.iter().map(|p| p.1).collect(), vols.clone()).unwrap();
        let grad: f64 = (0..n)
            .map(|i| vols[i] * logit(q.values[i]).unwrap() * (rho.values[i] - q.values[i]))
            .sum();
        let three_term = fermi_dirac_entropy(&rho) - fermi_dirac_entropy(&q) - grad;
        let d = bregman_divergence(&rho, &q).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - three_term).abs() <= 1e-12, "{} vs {}", d, three_term);
    }

    #[test]
    fn latent_divergence_agrees_with_density_form(a in -12.0..12.0_f64, b in -12.0..12.0_f64) {
        let vols = [0.5];
        let rho = DensityField::new(vec![sigmoid(a)], vols.to_vec()).unwrap();
        let q = DensityField::new(vec![sigmoid(b)], vols.to_vec()).unwrap();
        let direct = bregman_divergence(&rho, &q).unwrap();
        let latent = bregman_divergence_latent(&[a], &[b], &vols).unwrap();
        prop_assert!((direct - latent).abs() <= 1e-10 * (1.0 + direct));
    }

    #[test]
    fn projection_idempotent_and_feasible(
        q in prop::collection::vec(-1.0..2.0_f64, 2..60),
        theta in 0.05..0.95_f64,
    ) {
        let n = q.len();
        let vols = vec![2.0 / n as f64; n];
        let adm = AdmissibleParams::new(theta, 2.0).unwrap();
        let (p, _) = l2_project(&q, &adm, &vols).unwrap();
        prop_assert!(p.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(p.volume() <= adm.volume_bound() + 1e-12);
        let (pp, _) = l2_project(&p.values, &adm, &vols).unwrap();
        for (a, b) in p.values.iter().zip(&pp.values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_nonexpansive(
        xs in prop::collection::vec((-1.0..2.0_f64, -1.0..2.0_f64, 0.1..1.0_f64), 2..40),
        theta in 0.05..0.95_f64,
    ) {
        let vols: Vec<f64> = xs.iter().map(|t| t.2).collect();
        let total: f64 = vols.iter().sum();
        let adm = AdmissibleParams::new(theta, total).unwrap();
        let a: Vec<f64> = xs.iter().map(|t| t.0).collect();
        let b: Vec<f64> = xs.iter().map(|t| t.1).collect();
        let (pa, _) = l2_project(&a, &adm, &vols).unwrap();
        let (pb, _) = l2_project(&b, &adm, &vols).unwrap();
        let before: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let after: Vec<f64> = pa.values.iter().zip(&pb.values).map(|(x, y)| x - y).collect();
        prop_assert!(m_norm(&after, &vols) <= m_norm(&before, &vols) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn update_identity_on_unclamped_cells(
        cells in prop::collection::vec((-5.0..5.0_f64, -2.0..2.0_f64), 2..50),
        alpha in 0.1..10.0_f64,
        theta in 0.1..0.9_f64,
    ) {
        let n = cells.len();
        let vols = vec![1.0 / n as f64; n];
        let adm = AdmissibleParams::new(theta, 1.0).unwrap();
        let psi = LatentField::new(cells.iter().map(|c| c.0).collect(), 30.0).unwrap();
        let g: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let half = latent_step(&psi, &g, alpha, 0.0);
        let vc = volume_correct(&half, alpha, &adm, &vols, &g, None, 1e-12).unwrap();
        prop_assert!(vc.mu >= 0.0);
        for i in 0..n {
            if vc.psi.values[i].abs() < 30.0 {
                let r = g[i] + (vc.psi.values[i] - psi.values[i]) / alpha + vc.mu;
                prop_assert!(r.abs() <= 1e-12, "cell {}: {}", i, r);
            }
        }
    }

    #[test]
    fn volume_map_strictly_decreasing(
        psi in prop::collection::vec(-8.0..8.0_f64, 1..40),
        alpha in 0.01..10.0_f64,
    ) {
        let n = psi.len();
        let vols = vec![1.0 / n as f64; n];
        let volume = |mu: f64| -> f64 {
            psi.iter().zip(&vols).map(|(p, w)| w * sigmoid(p - alpha * mu)).sum()
        };
        let mut prev = volume(0.0);
        for k in 1..=50 {
            let v = volume(k as f64 * 0.1);
            prop_assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn kkt_vanishes_at_stationarity(
        cells in prop::collection::vec((interior(), 0..3usize, 1e-3..3.0_f64), 1..30),
        alpha in 0.01..10.0_f64,
    ) {
        // multiplier signs of a KKT point: λ ≤ 0 at ρ = 0, λ ≥ 0 at ρ = 1, λ = 0 inside
        let n = cells.len();
        let mut rho = Vec::with_capacity(n);
        let mut lambda = Vec::with_capacity(n);
        for &(r, kind, mag) in &cells {
            let (r, l) = match kind {
                0 => (0.0, -mag),
                1 => (1.0, mag),
                _ => (r, 0.0),
            };
            rho.push(r);
            lambda.push(l);
        }
        let psi_k = vec![0.0; n];
        let psi_next: Vec<f64> = lambda.iter().map(|l| alpha * l).collect();
        let rho = DensityField { values: rho, cell_volumes: vec![1.0 / n as f64; n] };
        for variant in [KktVariant::A, KktVariant::B] {
            let (kkt, _) = kkt_estimate(&psi_next, &psi_k, alpha, 0.0, &rho, variant, None).unwrap();
            prop_assert_eq!(kkt, 0.0);
        }
    }

    #[test]
    fn oc_iterates_meet_volume(
        cells in prop::collection::vec((0.05..0.95_f64, -5.0..-1e-3_f64), 10..80),
        theta in 0.2..0.6_f64,
    ) {
        let n = cells.len();
        let vols = vec![1.0 / n as f64; n];
        let adm = AdmissibleParams::new(theta, 1.0).unwrap();
        let rho = DensityField::new(cells.iter().map(|c| c.0).collect(), vols.clone()).unwrap();
        let g: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let cfg = OcConfig::default();
        let (next, _) = oc_update(&rho, &g, &adm, &cfg).unwrap();
        for (a, b) in next.values.iter().zip(&rho.values) {
            prop_assert!((a - b).abs() <= cfg.move_limit + 1e-15);
        }
        let reachable_lo: f64 = rho.values.iter().map(|r| (r - cfg.move_limit).max(0.0) / n as f64).sum();
        let reachable_hi: f64 = rho.values.iter().map(|r| (r + cfg.move_limit).min(1.0) / n as f64).sum();
        if reachable_lo < adm.volume_bound() && reachable_hi > adm.volume_bound() {
            prop_assert!((next.volume() - adm.volume_bound()).abs() <= cfg.bisection_tol * adm.domain_volume);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn bregman_divergence_nonnegative(r in interior(), s in interior(), w in 0.01..2.0_f64) {
        let rho = DensityField::new(vec![r], vec![w]).unwrap();
        let q = DensityField::new(vec![s], vec![w]).unwrap();
        prop_assert!(bregman_divergence(&rho, &q).unwrap() >= 0.0);
        prop_assert!(bregman_divergence(&q, &q).unwrap().abs() <= 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_sums_to_domain_measure_under_refinement(
        nx in 1..24usize, ny in 1..24usize, lx in 0.1..4.0_f64, ly in 0.1..4.0_f64,
    ) {
        for k in [1, 2] {
            let mesh = CartesianMesh::new(k * nx, k * ny, lx, ly).unwrap();
            let ops = assemble_filter_operators(&mesh, 0.05).unwrap();
            let total: f64 = ops.m.iter().sum();
            prop_assert!((total - lx * ly).abs() <= 1e-12 * (lx * ly).max(1.0));
            let nodal: f64 = ops.mtilde.values().iter().sum();
            prop_assert!((nodal - lx * ly).abs() <= 1e-12 * (lx * ly).max(1.0));
        }
    }

    #[test]
    fn filter_preserves_constants(nx in 2..20usize, ny in 2..20usize, c in 0.0..1.0_f64, r_min in 0.01..0.5_f64) {
        let mesh = CartesianMesh::new(nx, ny, nx as f64 / ny as f64, 1.0).unwrap();
        let ops = assemble_filter_operators(&mesh, r_min).unwrap();
        let rhs = ops.n.mul_vec(&vec![c; mesh.num_cells()]);
        let (x, _) = cg_solve_logged(&ops.system, &rhs, 1e-14, 10_000, None, None).unwrap();
        prop_assert!(x.iter().all(|v| (v - c).abs() <= 1e-9));
    }

    #[test]
    fn cg_energy_decreases(nx in 2..12usize, ny in 2..12usize, seed in 0..1000u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mesh = CartesianMesh::new(nx, ny, 1.0, 1.0).unwrap();
        let mut spaces = FemSpaces::new(&mesh);
        spaces.restrain(&mesh.nodes_where(|x, _| x == 0.0), simpl::grid::Restraint::Xy);
        let mut load: Vec<f64> = (0..mesh.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        spaces.apply_homogeneous(&mut load);
        let young: Vec<f64> = (0..mesh.num_cells()).map(|_| rng.gen_range(1e-3..1.0)).collect();
        let model = ElasticModel::new(mesh, spaces, Material::default(), load.clone()).unwrap();
        let k = model.assemble_stiffness(&young);
        let mut log = Vec::new();
        cg_solve_logged(&k, &load, 1e-10, 10_000, None, Some(&mut log)).unwrap();
        for w in log.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1e-300));
        }
    }
}
