mod support {
    pub mod metric_oracles;
}

use cloudvol_core::cloudtype::CloudType;
use cloudvol_core::heights::LEVELS;
use cloudvol_core::metrics::{
    cloud_mask, dice, psnr, rmse, spatial_rmse_grid, ssim, stratify, EvalSample, Z_CLOUD_DBZ,
};
use cloudvol_core::norm::{normalize, Variable, PROFILE_VARS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::metric_oracles as oracle;

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> oracle::Grid {
    (0..h)
        .map(|_| (0..w).map(|_| rng.random_range(-30.0..20.0)).collect())
        .collect()
}

#[test]
fn metrics_match_brute_force_on_random_curtains() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let range = 50.0;
    for _ in 0..1000 {
        let p = random_grid(&mut rng, 16, 16);
        let t = random_grid(&mut rng, 16, 16);
        let mut m: Vec<Vec<bool>> = (0..16)
            .map(|_| (0..16).map(|_| rng.random_bool(0.7)).collect())
            .collect();
        m[0][0] = true;
        let (pf, tf, mf) = (oracle::flatten(&p), oracle::flatten(&t), oracle::flatten(&m));
        assert!((rmse(&pf, &tf, &mf).unwrap() - oracle::rmse(&p, &t, &m)).abs() < 1e-10);
        assert!((psnr(&pf, &tf, &mf, range).unwrap() - oracle::psnr(&p, &t, &m, range)).abs() < 1e-10);
        assert!((ssim(&pf, &tf, 16, 16, range) - oracle::ssim(&p, &t, range)).abs() < 1e-10);
        let all = vec![true; 256];
        let (a, b) = (cloud_mask(&pf, &all, Variable::Z), cloud_mask(&tf, &all, Variable::Z));
        let a2: Vec<Vec<bool>> = a.chunks(16).map(<[bool]>::to_vec).collect();
        let b2: Vec<Vec<bool>> = b.chunks(16).map(<[bool]>::to_vec).collect();
        assert!((dice(&a, &b) - oracle::dice(&a2, &b2)).abs() < 1e-10);
    }
}

#[test]
fn small_curtains_use_one_global_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = random_grid(&mut rng, 6, 9);
    let t = random_grid(&mut rng, 6, 9);
    let v = ssim(&oracle::flatten(&p), &oracle::flatten(&t), 6, 9, 50.0);
    assert!((v - oracle::ssim(&p, &t, 50.0)).abs() < 1e-12);
}

#[test]
fn ssim_of_constant_curtains_has_closed_form() {
    let range = 50.0f64;
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    for (c, d) in [(-10.0, 0.0), (-10.0, 3.0), (5.0, -20.0), (0.0, 0.5)] {
        let t = vec![c; 20 * 16];
        let p = vec![c + d; 20 * 16];
        let expect = (2.0 * c * (c + d) + c1) / (c * c + (c + d) * (c + d) + c1);
        let _ = c2;
        assert!((ssim(&p, &t, 20, 16, range) - expect).abs() < 1e-12);
    }
}

#[test]
fn negated_zero_mean_curtain_has_negative_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // alternating signs keep every local window close to zero mean
    let t: oracle::Grid = (0..16)
        .map(|i| {
            (0..16)
                .map(|j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 } * rng.random_range(5.0..10.0))
                .collect()
        })
        .collect();
    let p: oracle::Grid = t.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
    let v = ssim(&oracle::flatten(&p), &oracle::flatten(&t), 16, 16, 50.0);
    assert!(v < 0.0);
    assert!((v - oracle::ssim(&p, &t, 50.0)).abs() < 1e-10);
}

proptest! {
    #[test]
    fn ssim_of_itself_is_one(x in prop::collection::vec(-30.0f64..20.0, 12 * 14)) {
        prop_assume!(x.iter().any(|&v| v != x[0]));
        prop_assert_eq!(ssim(&x, &x, 12, 14, 50.0), 1.0);
    }

    #[test]
    fn dice_is_symmetric(a in prop::collection::vec(any::<bool>(), 40), b in prop::collection::vec(any::<bool>(), 40)) {
        prop_assert_eq!(dice(&a, &b), dice(&b, &a));
    }

    #[test]
    fn rmse_ignores_joint_permutation(
        v in prop::collection::vec((-30.0f64..20.0, -30.0f64..20.0), 2..50),
        seed in any::<u64>(),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let tp: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let m = vec![true; p.len()];
        let a = rmse(&p, &t, &m).unwrap();
        let b = rmse(&pp, &tp, &m).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn dice_boundaries() {
    assert_eq!(dice(&[true; 4], &[true; 4]), 1.0);
    assert_eq!(dice(&[true, true, false, false], &[false, false, true, true]), 0.0);
    let a = [true, true, true, true, false, false];
    let b = [false, false, true, true, true, true];
    assert_eq!(dice(&a, &b), 0.5);
}

fn norm_column(z: f64, iwc: f64, re: f64) -> Vec<f32> {
    let mut v = Vec::with_capacity(3 * LEVELS);
    for (x, var) in [(z, Variable::Z), (iwc, Variable::Iwc), (re, Variable::Re)] {
        v.extend(std::iter::repeat_n(normalize(x, var).unwrap() as f32, LEVELS));
    }
    v
}

fn eval_sample(id: &str, cols: &[(CloudType, f64, f64)], lat: f64, lon: f64) -> EvalSample {
    // (type, target z, pred z offset)
    let mut target = Vec::new();
    let mut pred = Vec::new();
    for &(t, z, dz) in cols {
        let (iwc, re) = if t == CloudType::NoCloud {
            (1e-5, 0.0)
        } else {
            (0.1, 40.0)
        };
        target.extend(norm_column(z, iwc, re));
        pred.extend(norm_column(z + dz, iwc * (1.0 + dz.abs() / 10.0), re + dz));
    }
    EvalSample {
        sample_id: id.into(),
        lat: vec![lat; cols.len()],
        lon: vec![lon; cols.len()],
        cloud_type: cols.iter().map(|c| c.0).collect(),
        target,
        pred,
    }
}

#[test]
fn clear_only_dataset_has_one_class() {
    let s = eval_sample("a", &[(CloudType::NoCloud, -30.0, 0.0); 5], 1.0, 1.0);
    let r = stratify(&[s], &PROFILE_VARS, "test", 5.0).unwrap();
    for v in &r.variables {
        let names: Vec<&str> = v.strata.iter().map(|s| s.stratum.as_str()).collect();
        assert_eq!(names, ["all", "no_cloud"]);
    }
}

#[test]
fn strata_partition_columns_and_cloudy_is_harder() {
    use CloudType::*;
    let samples = vec![
        eval_sample(
            "a",
            &[
                (NoCloud, -30.0, 0.0),
                (Cirrus, -10.0, 2.0),
                (Cumulus, 0.0, -3.0),
                (NoCloud, -30.0, 0.0),
            ],
            2.0,
            3.0,
        ),
        eval_sample(
            "b",
            &[(DeepConvection, 10.0, 4.0), (NoCloud, -30.0, 0.0), (Cirrus, -5.0, 1.0)],
            12.0,
            3.0,
        ),
    ];
    let r = stratify(&samples, &PROFILE_VARS, "test", 5.0).unwrap();
    assert_eq!(r.columns, 7);
    for v in &r.variables {
        let all = v.stratum("all").unwrap();
        assert_eq!(all.columns, 7);
        let typed: usize = v
            .strata
            .iter()
            .filter(|s| s.stratum != "all" && s.stratum != "cloudy")
            .map(|s| s.columns)
            .sum();
        assert_eq!(typed, 7);
        let cloudy = v.stratum("cloudy").unwrap();
        assert_eq!(cloudy.columns, 4);
        assert!(cloudy.rmse.mean >= all.rmse.mean, "{}", v.variable);
        assert_eq!(v.spatial.cells.len(), 2);
    }
    let csv = r.to_csv();
    assert!(csv.starts_with("variable,stratum,metric,mean,std,n\n"));
}

#[test]
fn spatial_grid_rules() {
    use CloudType::*;
    let a = eval_sample("a", &[(Cirrus, -10.0, 2.0), (Cumulus, 0.0, -3.0)], 1.0, 1.0);
    let g = spatial_rmse_grid(std::slice::from_ref(&a), &PROFILE_VARS, 0, 5.0).unwrap();
    assert_eq!(g.cells.len(), 1);
    let global = ((4.0 + 9.0) / 2.0f64).sqrt();
    assert!((g.cells[0].rmse - global).abs() < 1e-4);

    let edge = eval_sample("e", &[(Cirrus, -10.0, 2.0)], 5.0, 10.0);
    let g = spatial_rmse_grid(&[edge], &PROFILE_VARS, 0, 5.0).unwrap();
    assert_eq!((g.cells[0].lat_bin, g.cells[0].lon_bin), (0, 1));
    assert_eq!((g.cells[0].lat_lo, g.cells[0].lon_lo), (0.0, 5.0));
    assert!(spatial_rmse_grid(&[], &[Variable::Z], 0, 0.0).is_err());

    let pgm = g.to_pgm();
    assert!(pgm.starts_with(b"P5\n1 1\n255\n"));
}

#[test]
fn cloud_threshold_boundary() {
    let m = cloud_mask(&[Z_CLOUD_DBZ, -25.5, -20.0], &[true, true, false], Variable::Z);
    assert_eq!(m, vec![true, false, false]);
}
