use enl_core::theory::{exact_stationary, lyapunov_oracle};
use enl_core::Hyperparams;

#[test]
fn exact_matches_stacked_oracle_on_grid() {
    let mut worst = (0.0f64, String::new());
    for beta in [0.0, 0.5, 0.9, 0.99] {
        for el in [1e-4, 0.01, 0.1, 0.5, 1.0, 0.9 * 2.0 * (1.0 + beta)] {
            for m in [5usize, 50, 500] {
                let hp = Hyperparams::with_batches(1.0, beta, m).unwrap();
                let e = exact_stationary(el, 1.0, &hp).unwrap();
                let o = lyapunov_oracle(el, 1.0, &hp, None).unwrap();
                let err = ((e.sigma_theta2 - o.sigma_theta2) / o.sigma_theta2)
                    .abs()
                    .max(((e.sigma_v2 - o.sigma_v2) / o.sigma_v2).abs());
                if err > worst.0 {
                    worst = (err, format!("beta={beta} el={el} M={m}"));
                }
            }
        }
    }
    println!("worst relative error {:e} at {}", worst.0, worst.1);
    assert!(worst.0 <= 1e-8);
}
