use groupseg::attribution::*;
use groupseg::players::{baseline_players, BaselineParams, PlayerScheme, PlayerSet};
use groupseg::predictors::{FnPredictor, LinearPredictor, Predictor};
use groupseg::window::Window;
use proptest::prelude::*;

fn timesteps(n: usize, d: usize) -> PlayerSet {
    baseline_players(PlayerScheme::Timestep, n, d, BaselineParams::default()).unwrap()
}

/// Degree-2 polynomial in the per-row sums of a window.
#[derive(Clone, Debug)]
struct Poly {
    linear: Vec<f64>,
    quad: Vec<(usize, usize, f64)>,
}

impl Predictor for Poly {
    fn predict(&self, windows: &[Window]) -> groupseg::Result<Vec<f64>> {
        Ok(windows
            .iter()
            .map(|w| {
                let rows: Vec<f64> = (0..w.t_len()).map(|t| w.row(t).iter().sum()).collect();
                let lin: f64 = self.linear.iter().zip(&rows).map(|(a, r)| a * r).sum();
                let quad: f64 = self.quad.iter().map(|&(i, j, c)| c * rows[i] * rows[j]).sum();
                lin + quad
            })
            .collect())
    }
}

fn arb_poly(n: usize) -> impl Strategy<Value = Poly> {
    (
        prop::collection::vec(-2.0..2.0f64, n),
        prop::collection::vec((0..n, 0..n, -1.0..1.0f64), 0..6),
    )
        .prop_map(|(linear, quad)| Poly { linear, quad })
}

fn arb_case() -> impl Strategy<Value = (Poly, Window, Vec<f64>, u64, usize)> {
    (2usize..=6, 1usize..=3).prop_flat_map(|(n, d)| {
        (
            arb_poly(n),
            prop::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| Window::new(n, d, v).unwrap()),
            prop::collection::vec(-1.0..1.0f64, d),
            any::<u64>(),
            prop::sample::select(vec![1usize, 5, 50]),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn efficiency_holds_for_every_m((f, w, mu, seed, m) in arb_case()) {
        let players = timesteps(w.t_len(), w.d_len());
        let sigma = vec![0.5; mu.len()];
        for mode in [MaskingMode::Mean, MaskingMode::Zero, MaskingMode::Noise] {
            let b = MaskingBaseline::new(mode, mu.clone(), sigma.clone(), seed).unwrap();
            let r = shapley_permutation(&f, &w, &players, m, &b, seed).unwrap();
            prop_assert!(r.efficiency_gap() <= 1e-9);
            prop_assert_eq!(r.forward_calls as usize, m * (players.len() + 1));
            let again = shapley_permutation(&f, &w, &players, m, &b, seed).unwrap();
            prop_assert_eq!(&r.phi, &again.phi);
            let exact = shapley_exact(&f, &w, &players, &b).unwrap();
            prop_assert!(exact.efficiency_gap() <= 1e-9);
        }
    }

    #[test]
    fn linearity_of_exact_values((f, w, mu, _seed, _m) in arb_case(), g in arb_poly(6)) {
        let n = w.t_len();
        let g = Poly { linear: g.linear[..n].to_vec(), quad: g.quad.into_iter().filter(|q| q.0 < n && q.1 < n).collect() };
        let players = timesteps(n, w.d_len());
        let b = MaskingBaseline::new(MaskingMode::Mean, mu.clone(), vec![0.0; mu.len()], 0).unwrap();
        let sum = FnPredictor(|x: &Window| {
            f.predict(std::slice::from_ref(x)).unwrap()[0] + g.predict(std::slice::from_ref(x)).unwrap()[0]
        });
        let pf = shapley_exact(&f, &w, &players, &b).unwrap().phi;
        let pg = shapley_exact(&g, &w, &players, &b).unwrap().phi;
        let ps = shapley_exact(&sum, &w, &players, &b).unwrap().phi;
        for i in 0..n {
            prop_assert!((ps[i] - pf[i] - pg[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn dummy_rows_get_exactly_zero((mut f, w, mu, seed, m) in arb_case()) {
        let n = w.t_len();
        let dummy = n - 1;
        f.linear[dummy] = 0.0;
        f.quad.retain(|q| q.0 != dummy && q.1 != dummy);
        let players = timesteps(n, w.d_len());
        let b = MaskingBaseline::new(MaskingMode::Mean, mu, vec![0.0; w.d_len()], 0).unwrap();
        prop_assert_eq!(shapley_exact(&f, &w, &players, &b).unwrap().phi[dummy], 0.0);
        prop_assert_eq!(shapley_permutation(&f, &w, &players, m, &b, seed).unwrap().phi[dummy], 0.0);
    }
}

#[test]
fn symmetric_players_share_value() {
    // f depends on rows 0 and 1 only through their sum and product.
    let f = FnPredictor(|w: &Window| {
        let (a, b) = (w.get(0, 0), w.get(1, 0));
        (a + b).sin() + a * b * w.get(2, 0)
    });
    let w = Window::new(4, 1, vec![0.7, 0.7, -1.3, 2.0]).unwrap();
    let b = MaskingBaseline::new(MaskingMode::Mean, vec![0.2], vec![0.0], 0).unwrap();
    let phi = shapley_exact(&f, &w, &timesteps(4, 1), &b).unwrap().phi;
    assert!((phi[0] - phi[1]).abs() <= 1e-12);
    assert_eq!(phi[3], 0.0);
}

#[test]
fn linear_model_exact_values_are_weighted_deviations() {
    let w = Window::new(3, 2, vec![1.0, 2.0, -1.0, 0.5, 4.0, -2.0]).unwrap();
    let weights = vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0];
    let f = LinearPredictor::new(3, 2, weights.clone()).unwrap();
    let mu = vec![0.25, -0.75];
    let b = MaskingBaseline::new(MaskingMode::Mean, mu.clone(), vec![0.0; 2], 0).unwrap();
    let cells = baseline_players(PlayerScheme::Cell, 3, 2, BaselineParams::default()).unwrap();
    let phi = shapley_exact(&f, &w, &cells, &b).unwrap().phi;
    for (i, p) in phi.iter().enumerate() {
        let want = weights[i] * (w.as_slice()[i] - mu[i % 2]);
        assert!((p - want).abs() < 1e-12);
    }
}
