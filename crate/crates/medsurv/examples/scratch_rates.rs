use medsurv::contrasts::{projection, centering, moore_penrose, Matrix};
use medsurv::estimator::KmFit;
use medsurv::seeding::{derive_seed, stream_rng};
use medsurv::simulation::SurvivalDistribution;
use medsurv::survdata::SurvivalSample;
use medsurv::variance::{sigma_one_sided, sigma_two_sided};
use medsurv::wald::{wald_statistic, chi_square_sf, WaldInput};
use rayon::prelude::*;

fn main() {
    // 1. sigma estimator spread at n = 10^4, Exp(1)
    let exp = SurvivalDistribution::exponential(1.0).unwrap();
    let reps = 200u64;
    let stats: Vec<(f64, f64)> = (0..reps).into_par_iter().map(|rep| {
        let mut rng = stream_rng(derive_seed(404, rep), 0);
        let times: Vec<f64> = (0..10_000).map(|_| exp.sample(&mut rng)).collect();
        let s = SurvivalSample::from_arrays("g", &times, &vec![true; 10_000]).unwrap();
        (sigma_one_sided(&s, 0.1).unwrap().sigma, sigma_two_sided(&s, 0.1).unwrap().sigma)
    }).collect();
    let mean = |f: &dyn Fn(&(f64,f64)) -> f64| stats.iter().map(|x| f(x)).sum::<f64>() / reps as f64;
    let m1 = mean(&|x| x.0); let m2 = mean(&|x| x.1);
    let sd1 = (stats.iter().map(|x| (x.0 - m1).powi(2)).sum::<f64>() / reps as f64).sqrt();
    let sd2 = (stats.iter().map(|x| (x.1 - m2).powi(2)).sum::<f64>() / reps as f64).sqrt();
    println!("n=10^4 Exp(1): one-sided mean {m1:.4} sd {sd1:.4}; two-sided mean {m2:.4} sd {sd2:.4}");

    // 2. W with ORACLE sigma at n=200 x 4 groups: KS vs chi2_3
    let t = projection(&centering(4).unwrap());
    let mut ws: Vec<f64> = (0..2000u64).into_par_iter().map(|rep| {
        let mut rng = stream_rng(derive_seed(555, rep), 0);
        let m_hat: Vec<f64> = (0..4).map(|_| {
            let mut pairs: Vec<(f64, bool)> = (0..200).map(|_| (exp.sample(&mut rng), true)).collect();
            KmFit::from_pairs(&mut pairs).median().unwrap()
        }).collect();
        wald_statistic(&WaldInput { m_hat, sigma_hat: vec![1.0; 4], n_vec: vec![200; 4], t: t.clone() }).unwrap()
    }).collect();
    ws.sort_by(f64::total_cmp);
    let n = ws.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &w) in ws.iter().enumerate() {
        let f = 1.0 - chi_square_sf(w, 3).unwrap();
        ks = ks.max(((i+1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    println!("oracle-sigma W at n=200: KS vs chi2_3 = {ks:.4}");

    // 3. estimated-sigma W at n=200: KS + 95th percentile, both sigma methods
    for two_sided in [false, true] {
        let mut ws: Vec<f64> = (0..2000u64).into_par_iter().map(|rep| {
            let mut rng = stream_rng(derive_seed(555, rep), 0);
            let mut m_hat = Vec::new();
            let mut s_hat = Vec::new();
            for _ in 0..4 {
                let times: Vec<f64> = (0..200).map(|_| exp.sample(&mut rng)).collect();
                let s = SurvivalSample::from_arrays("g", &times, &vec![true; 200]).unwrap();
                let fit = KmFit::new(&s);
                m_hat.push(fit.median().unwrap());
                s_hat.push(if two_sided { sigma_two_sided(&s, 0.1).unwrap().sigma } else { sigma_one_sided(&s, 0.1).unwrap().sigma });
            }
            wald_statistic(&WaldInput { m_hat, sigma_hat: s_hat, n_vec: vec![200; 4], t: t.clone() }).unwrap()
        }).collect();
        ws.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &w) in ws.iter().enumerate() {
            let f = 1.0 - chi_square_sf(w, 3).unwrap();
            ks = ks.max(((i+1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
        }
        println!("estimated-sigma (two_sided={two_sided}) W at n=200: KS = {ks:.4}, 95th pct = {:.3}", ws[1899]);
    }

    // 4. projection quality via SVD-of-H route vs current route on an ill-conditioned contrast
    let h = Matrix::from_row_slice(3, 4, &[
        1.0, -1.0, 0.0, 0.0,
        1.0, -1.0000001, 0.0000001, 0.0,
        0.0, 1.0, -0.5, -0.5,
    ]).unwrap();
    let t = projection(&h);
    println!("ill-conditioned H: idempotence residual {:.2e}", t.matmul(&t).max_abs_diff(&t));
    let hth = h.matmul(&h.transpose());
    let _ = moore_penrose(&hth);
}
