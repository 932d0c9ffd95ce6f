use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use spbn::{CkdeCpd, Dataset, FitConfig, NodeType, SelectorConfig, SelectorKind, Spbn, SpdMatrix, Structure};

fn pair_data(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let p: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
            let c = p.sin() * 2.0 + 0.5 * rng.sample::<f64, _>(StandardNormal);
            vec![c, p]
        })
        .collect();
    Dataset::from_rows(vec!["c".into(), "p".into()], &rows).unwrap()
}

#[test]
fn conditional_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for case in 0..50 {
        let n = rng.gen_range(1..=20);
        let train = pair_data(&mut rng, n);
        let (a, b) = (rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0));
        let r = rng.gen_range(-0.9..0.9) * f64::sqrt(a * b);
        let h = SpdMatrix::from_rows(&[vec![a, r], vec![r, b]]).unwrap();
        let cpd = CkdeCpd::from_parts("c", &["p".to_string()], SelectorKind::Nr, train.clone(), h)
            .unwrap();
        let pa: f64 = rng.gen_range(-5.0..5.0);
        let cs = train.column(0);
        let reach = 10.0 * a.sqrt();
        let lo = cs.iter().cloned().fold(f64::INFINITY, f64::min) - reach - 10.0;
        let hi = cs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + reach + 10.0;
        let m = 20_000;
        let step = (hi - lo) / m as f64;
        let rows: Vec<Vec<f64>> = (0..=m).map(|k| vec![lo + k as f64 * step, pa]).collect();
        let grid = Dataset::from_rows(vec!["c".into(), "p".into()], &rows).unwrap();
        let lp = cpd.logpdf(&grid).unwrap();
        let total: f64 = lp
            .iter()
            .enumerate()
            .map(|(k, l)| if k == 0 || k == m { 0.5 * l.exp() } else { l.exp() })
            .sum::<f64>()
            * step;
        assert!((total - 1.0).abs() < 1e-3, "case {case}: {total}");
    }
}

#[test]
fn marginal_block_is_bit_identical_and_refits_repeat() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let data = pair_data(&mut rng, 200);
    for kind in [SelectorKind::Nr, SelectorKind::Ucv] {
        let fit = || CkdeCpd::fit(&data, "c", &["p".to_string()], kind, &SelectorConfig::default()).unwrap();
        let a = fit();
        let sub = a.bandwidth().principal_submatrix().unwrap();
        assert_eq!(a.marginal_bandwidth().unwrap().as_slice(), sub.as_slice());
        let b = fit();
        assert_eq!(a.bandwidth().as_slice(), b.bandwidth().as_slice());
    }
}

#[test]
fn root_ckde_samples_follow_the_kernel_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x: Vec<f64> = (0..60)
        .map(|_| {
            let c = if rng.gen_bool(0.3) { -3.0 } else { 1.0 };
            c + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let data = Dataset::univariate("x", &x).unwrap();
    let structure = Structure::empty(vec!["x".into()], NodeType::Ckde).unwrap();
    let model = Spbn::fit(&data, structure, &FitConfig::default()).unwrap();
    let h = match &model.cpds()[0] {
        spbn::Cpd::Ckde(c) => c.bandwidth().get(0, 0),
        _ => unreachable!(),
    };
    let kernels: Vec<Normal> = x.iter().map(|&m| Normal::new(m, h.sqrt()).unwrap()).collect();
    let cdf = |t: f64| kernels.iter().map(|k| k.cdf(t)).sum::<f64>() / kernels.len() as f64;

    let n = 10_000;
    let mut s = model.sample(n, 5).unwrap().column(0);
    s.sort_by(f64::total_cmp);
    let ks = s
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.02, "KS = {ks}");
}

#[test]
fn total_loglik_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let data = pair_data(&mut rng, 150);
    let structure = Structure::from_json(
        r#"{"nodes":["c","p"],"arcs":[["p","c"]],"types":{"c":"CKDE","p":"LG"}}"#,
    )
    .unwrap();
    let model = Spbn::fit(&data, structure, &FitConfig::default()).unwrap();
    let rev: Vec<usize> = (0..150).rev().collect();
    let a = model.logpdf(&data).unwrap();
    let b = model.logpdf(&data.take_rows(&rev).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-9 * a.abs());
}
