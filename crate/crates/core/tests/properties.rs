use bless_core::data::{Dataset, PatternCounts};
use bless_core::em::{canonicalize, log_likelihood, log_likelihood_counts};
use bless_core::identify::chi2_independence_test;
use bless_core::model::{marginal_pmf, response_pmf_direct, response_pmf_kr, validate_model, BlessModel, GraphicalMatrix};
use bless_core::simulate::{random_model, sample_dataset, SimConfig};
use proptest::prelude::*;

fn arb_model() -> impl Strategy<Value = BlessModel> {
    (1usize..=3, 0usize..=2, 2usize..=3, any::<u64>(), any::<u64>()).prop_map(|(k, extra, d, seed, gseed)| {
        let p = k + extra + 1;
        let parents: Vec<usize> = (0..p)
            .map(|j| if j < k { j } else { (gseed.rotate_left(j as u32) as usize) % k })
            .collect();
        let g = GraphicalMatrix::from_parents(k, &parents).unwrap();
        random_model(&SimConfig::new(p, k, d, seed), &g).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pmf_forms_agree_and_normalize(m in arb_model()) {
        let a = response_pmf_direct(&m).unwrap();
        let b = response_pmf_kr(&m).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
        prop_assert!((a.total() - 1.0).abs() < 1e-12);
        prop_assert!(a.probs.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn relabeling_latents_keeps_pmf(m in arb_model(), k in 0usize..3) {
        let k = k % m.k();
        let pmf = response_pmf_kr(&m).unwrap();
        let flipped = m.flip_latent(k);
        prop_assert!(response_pmf_kr(&flipped).unwrap().max_abs_diff(&pmf) < 1e-14);
        let mut perm: Vec<usize> = (0..m.k()).collect();
        perm.rotate_left(1);
        prop_assert!(response_pmf_kr(&m.permute_latents(&perm)).unwrap().max_abs_diff(&pmf) < 1e-14);
        // flipping breaks monotonicity; orientation restores the original
        prop_assert!(!validate_model(&flipped).is_valid());
        prop_assert_eq!(canonicalize(&flipped), m.clone());
    }

    #[test]
    fn marginal_sums_out_the_rest(m in arb_model()) {
        let full = response_pmf_kr(&m).unwrap().probs;
        let marg = marginal_pmf(&m, &[0]).unwrap();
        let block = full.len() / m.d;
        for (c, &v) in marg.iter().enumerate() {
            let s: f64 = full[c * block..(c + 1) * block].iter().sum();
            prop_assert!((s - v).abs() < 1e-12);
        }
    }

    #[test]
    fn compressed_loglik_matches_subjects(m in arb_model(), seed in any::<u64>()) {
        let data = sample_dataset(&m, 200, seed).unwrap().data;
        let a = log_likelihood(&m, &data).unwrap();
        let b = log_likelihood_counts(&m, &PatternCounts::from_dataset(&data)).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs());
    }

    #[test]
    fn csv_round_trip(m in arb_model(), seed in any::<u64>()) {
        let data = sample_dataset(&m, 50, seed).unwrap().data;
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(&buf[..], m.d).unwrap(), data);
    }

    #[test]
    fn chi2_ignores_subject_order(seed in any::<u64>(), shift in 1usize..100) {
        let g = GraphicalMatrix::stacked_identity(2, 2);
        let m = random_model(&SimConfig::new(4, 2, 2, seed), &g).unwrap();
        let data = sample_dataset(&m, 300, seed ^ 1).unwrap().data;
        let order: Vec<usize> = (0..data.n()).map(|i| (i + shift) % data.n()).collect();
        let a = chi2_independence_test(&data, &[0, 2], &[1, 3], 0.05).unwrap();
        let b = chi2_independence_test(&data.reorder_rows(&order), &[0, 2], &[1, 3], 0.05).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() <= 1e-9 * a.statistic.max(1.0));
        prop_assert_eq!(a.df, b.df);
    }
}

#[test]
fn model_json_round_trip_and_hash() {
    let g = GraphicalMatrix::stacked_identity(2, 2);
    let m = random_model(&SimConfig::new(4, 2, 3, 3), &g).unwrap();
    let back = BlessModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.hash(), m.hash());
    let other = random_model(&SimConfig::new(4, 2, 3, 4), &g).unwrap();
    assert_ne!(other.hash(), m.hash());
}
