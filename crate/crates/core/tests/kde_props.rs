use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spbn::{Dataset, KdeModel, SpdMatrix};

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let cols = (0..d).map(|j| format!("x{j}")).collect();
    let values = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect();
    Dataset::new(cols, values).unwrap()
}

fn random_bandwidth(rng: &mut ChaCha8Rng, d: usize) -> SpdMatrix {
    if d == 1 {
        return SpdMatrix::diagonal(&[rng.gen_range(0.1..1.0)]).unwrap();
    }
    let (a, b) = (rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0));
    let r = rng.gen_range(-0.8..0.8) * (a * b as f64).sqrt();
    SpdMatrix::from_rows(&[vec![a, r], vec![r, b]]).unwrap()
}

#[test]
fn density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..6 {
        let d = 1 + case % 2;
        let n = rng.gen_range(1..=20);
        let data = random_data(&mut rng, n, d);
        let h = random_bandwidth(&mut rng, d);
        let kde = KdeModel::new(data.clone(), h.clone()).unwrap();
        let reach = 8.0 * h.eigenvalues()[d - 1].sqrt();
        let lo: Vec<f64> = (0..d)
            .map(|j| data.column(j).iter().cloned().fold(f64::INFINITY, f64::min) - reach)
            .collect();
        let hi: Vec<f64> = (0..d)
            .map(|j| data.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max) + reach)
            .collect();
        let m = if d == 1 { 4000 } else { 300 };
        let step: Vec<f64> = (0..d).map(|j| (hi[j] - lo[j]) / m as f64).collect();
        let weight = |k: usize| if k == 0 || k == m { 0.5 } else { 1.0 };
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if d == 1 {
            for k in 0..=m {
                points.push(vec![lo[0] + k as f64 * step[0]]);
                weights.push(weight(k));
            }
        } else {
            for k in 0..=m {
                for l in 0..=m {
                    points.push(vec![lo[0] + k as f64 * step[0], lo[1] + l as f64 * step[1]]);
                    weights.push(weight(k) * weight(l));
                }
            }
        }
        let grid = Dataset::from_rows(data.columns().to_vec(), &points).unwrap();
        let lp = kde.logpdf(&grid).unwrap();
        let cell: f64 = step.iter().product();
        let total: f64 = lp.iter().zip(&weights).map(|(l, w)| w * l.exp()).sum::<f64>() * cell;
        assert!((total - 1.0).abs() < 1e-3, "d={d} n={n}: {total}");
    }
}

#[test]
fn logpdf_ignores_training_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = random_data(&mut rng, 40, 2);
    let h = random_bandwidth(&mut rng, 2);
    let query = random_data(&mut rng, 15, 2);
    let mut order: Vec<usize> = (0..40).collect();
    order.shuffle(&mut rng);
    let a = KdeModel::new(data.clone(), h.clone()).unwrap().logpdf(&query).unwrap();
    let b = KdeModel::new(data.take_rows(&order).unwrap(), h)
        .unwrap()
        .logpdf(&query)
        .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn leave_one_out_matches_refit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for d in 1..=3 {
        let n = 12;
        let data = random_data(&mut rng, n, d);
        let h = SpdMatrix::diagonal(&vec![0.4; d]).unwrap();
        let loo = KdeModel::new(data.clone(), h.clone()).unwrap().loo_logpdf().unwrap();
        for i in 0..n {
            let rest: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let refit = KdeModel::new(data.take_rows(&rest).unwrap(), h.clone()).unwrap();
            let at = data.take_rows(&[i]).unwrap();
            let expected = refit.logpdf(&at).unwrap()[0];
            assert!((loo[i] - expected).abs() < 1e-12, "{} vs {expected}", loo[i]);
        }
    }
}
