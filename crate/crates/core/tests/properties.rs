use bnn_mcmc::augmentation::{flip, rotate, FlipAxis};
use bnn_mcmc::data::{stratified_split, SplitSpec};
use bnn_mcmc::diagnostics::{ess, split_rhat};
use bnn_mcmc::evaluation::{auc_mann_whitney, confusion_matrix, metrics_from_confusion, roc_curve};
use bnn_mcmc::features::{conv2d_valid, max_pool, relu, FeatureMap, Image, Kernel as ConvKernel};
use bnn_mcmc::model::{
    forward, grad_log_posterior, log_likelihood, log_posterior_unnorm, log_prior, softmax,
    Activation,
};
use bnn_mcmc::{Dataset, NetworkSpec, PriorSpec};
use proptest::prelude::*;

fn small_spec() -> impl Strategy<Value = NetworkSpec> {
    (
        1usize..4,
        prop::collection::vec(1usize..5, 0..3),
        2usize..4,
        prop::bool::ANY,
    )
        .prop_map(|(d, hidden, k, tanh)| NetworkSpec {
            input_dim: d,
            hidden_dims: hidden,
            n_classes: k,
            activation: if tanh { Activation::Tanh } else { Activation::Relu },
        })
        .prop_filter("at most 50 parameters", |s| s.param_count() <= 50)
}

/// A spec together with weights, a dataset and the prior variance.
fn model_case() -> impl Strategy<Value = (NetworkSpec, Vec<f64>, Dataset, f64)> {
    small_spec().prop_flat_map(|spec| {
        let p = spec.param_count();
        let d = spec.input_dim;
        let k = spec.n_classes;
        (
            Just(spec),
            prop::collection::vec(-1.5f64..1.5, p),
            prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), 8),
            prop::collection::vec(0..k, 8),
            0.2f64..4.0,
        )
            .prop_map(move |(spec, w, rows, labels, var)| {
                let data = Dataset::new(rows, labels, k).unwrap();
                (spec, w, data, var)
            })
    })
}

/// Smallest |pre-activation| over every hidden unit and sample. A central
/// difference straddling a ReLU kink is not a derivative estimate.
fn min_abs_hidden_preactivation(spec: &NetworkSpec, w: &[f64], data: &Dataset) -> f64 {
    let sizes = spec.layer_sizes();
    let mut min = f64::INFINITY;
    for x in data.rows() {
        let mut a = x.to_vec();
        let mut offset = 0;
        for pair in sizes.windows(2).take(sizes.len() - 2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let mut next = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut z = w[offset + n_out * n_in + o];
                for i in 0..n_in {
                    z += w[offset + o * n_in + i] * a[i];
                }
                min = min.min(z.abs());
                next.push(z.max(0.0));
            }
            offset += (n_in + 1) * n_out;
            a = next;
        }
    }
    min
}

fn image(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..=1.0, h * w)
            .prop_map(move |px| Image::new(h, w, px).unwrap())
    })
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_a_distribution((spec, w, data, _) in model_case()) {
        for x in data.rows() {
            let p = forward(&spec, &w, x).unwrap();
            prop_assert_eq!(p.len(), spec.n_classes);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(z in prop::collection::vec(-50.0f64..50.0, 2..6), c in -500.0f64..500.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_is_additive((spec, w, data, _) in model_case()) {
        let total = log_likelihood(&spec, &w, &data).unwrap();
        let parts: f64 = (0..data.n_samples())
            .map(|i| log_likelihood(&spec, &w, &data.subset(&[i]).unwrap()).unwrap())
            .sum();
        prop_assert!(total.is_finite());
        prop_assert!(total <= 0.0);
        prop_assert!((total - parts).abs() < 1e-9 * (1.0 + total.abs()));
        let doubled = data.concat(&data).unwrap();
        let twice = log_likelihood(&spec, &w, &doubled).unwrap();
        prop_assert!((twice - 2.0 * total).abs() < 1e-9 * (1.0 + total.abs()));
    }

    #[test]
    fn log_prior_peaks_at_zero(w in prop::collection::vec(-5.0f64..5.0, 1..40), var in 0.1f64..10.0) {
        let prior = PriorSpec::new(var).unwrap();
        let zero = vec![0.0; w.len()];
        prop_assert!(log_prior(&w, &prior) <= log_prior(&zero, &prior));
    }

    #[test]
    fn gradient_matches_central_differences((spec, w, data, var) in model_case()) {
        if spec.activation == Activation::Relu {
            prop_assume!(min_abs_hidden_preactivation(&spec, &w, &data) > 1e-3);
        }
        let prior = PriorSpec::new(var).unwrap();
        let grad = grad_log_posterior(&spec, &w, &data, &prior).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (log_posterior_unnorm(&spec, &up, &data, &prior).unwrap()
                - log_posterior_unnorm(&spec, &down, &data, &prior).unwrap())
                / (2.0 * h);
            prop_assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1.0),
                "coordinate {}: analytic {} vs numeric {}", i, grad[i], fd);
        }
    }

    #[test]
    fn convolution_is_linear(
        px in prop::collection::vec(-1.0f64..1.0, 36),
        qx in prop::collection::vec(-1.0f64..1.0, 36),
        kw in prop::collection::vec(-1.0f64..1.0, 9),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let k = ConvKernel::new(3, kw).unwrap();
        let p = FeatureMap::new(6, 6, px.clone()).unwrap();
        let q = FeatureMap::new(6, 6, qx.clone()).unwrap();
        let mix: Vec<f64> = px.iter().zip(&qx).map(|(x, y)| a * x + b * y).collect();
        let lhs = conv2d_valid(&FeatureMap::new(6, 6, mix).unwrap(), &k).unwrap();
        let cp = conv2d_valid(&p, &k).unwrap();
        let cq = conv2d_valid(&q, &k).unwrap();
        for i in 0..lhs.values.len() {
            prop_assert!((lhs.values[i] - (a * cp.values[i] + b * cq.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn max_pool_commutes_with_relu(vals in prop::collection::vec(-1.0f64..1.0, 64), pool in 1usize..5) {
        let m = FeatureMap::new(8, 8, vals.clone()).unwrap();
        let a = max_pool(&FeatureMap::new(8, 8, relu(&vals)).unwrap(), pool).unwrap();
        let b = max_pool(&m, pool).unwrap();
        prop_assert_eq!(a.values, relu(&b.values));
    }

    #[test]
    fn rotation_and_flip_preserve_pixels(img in image(7), turn in 1u32..4, vertical in prop::bool::ANY) {
        let r = rotate(&img, turn * 90).unwrap();
        prop_assert_eq!(r.height() * r.width(), img.height() * img.width());
        prop_assert_eq!(sorted(r.pixels().to_vec()), sorted(img.pixels().to_vec()));
        let axis = if vertical { FlipAxis::Vertical } else { FlipAxis::Horizontal };
        let f = flip(&img, axis);
        prop_assert_eq!(sorted(f.pixels().to_vec()), sorted(img.pixels().to_vec()));
        let mut back = img.clone();
        for _ in 0..4 {
            back = rotate(&back, 90).unwrap();
        }
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(&flip(&f, axis), &img);
    }

    #[test]
    fn trapezoid_auc_equals_mann_whitney(
        pairs in prop::collection::vec((0u8..6, prop::bool::ANY), 2..60)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(*s) / 5.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|(_, l)| *l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let roc = roc_curve(&scores, &labels).unwrap();
        let mw = auc_mann_whitney(&scores, &labels).unwrap();
        prop_assert!((roc.auc - mw).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&roc.auc));
    }

    #[test]
    fn metrics_ignore_sample_order(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..50),
        rot in 0usize..50,
    ) {
        let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let r = rot % pairs.len();
        let (mut t2, mut p2) = (t.clone(), p.clone());
        t2.rotate_left(r);
        p2.rotate_left(r);
        let a = metrics_from_confusion(&confusion_matrix(&t, &p, 3).unwrap()).unwrap();
        let b = metrics_from_confusion(&confusion_matrix(&t2, &p2, 3).unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=1.0).contains(&a.macro_f1));
        prop_assert!((0.0..=1.0).contains(&a.accuracy));
    }

    #[test]
    fn split_partitions_the_rows(
        labels in prop::collection::vec(0usize..3, 6..60),
        frac in 0.1f64..0.9,
        seed in any::<u64>(),
        stratified in prop::bool::ANY,
    ) {
        let mut labels = labels;
        labels[0] = 0;
        labels[1] = 0;
        labels[2] = 1;
        labels[3] = 1;
        labels[4] = 2;
        labels[5] = 2;
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        let data = Dataset::new(rows, labels, 3).unwrap();
        let split = stratified_split(&data, &SplitSpec { test_fraction: frac, seed, stratified }).unwrap();
        let mut all = split.train_indices.clone();
        all.extend(&split.test_indices);
        all.sort_unstable();
        prop_assert_eq!(all, (0..data.n_samples()).collect::<Vec<_>>());
        prop_assert!(!split.train_indices.is_empty() && !split.test_indices.is_empty());
        for (pos, &i) in split.test_indices.iter().enumerate() {
            prop_assert_eq!(split.test.row(pos)[0], i as f64);
        }
    }

    #[test]
    fn ess_is_bounded(series in prop::collection::vec(-10.0f64..10.0, 10..300)) {
        let e = ess(&series).unwrap();
        prop_assert!(e.value >= 1.0 && e.value <= series.len() as f64);
    }

    #[test]
    fn rhat_respects_its_floor(
        chains in (1usize..5, 4usize..100).prop_flat_map(|(m, n)| {
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), m)
        })
    ) {
        let r = split_rhat(&chains).unwrap();
        let half = (chains[0].len() / 2) as f64;
        let floor = ((half - 1.0) / half).sqrt();
        prop_assert!(r.value >= floor - 1e-9, "{} below floor {}", r.value, floor);
    }
}
