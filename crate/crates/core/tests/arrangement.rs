use parapack::arrange::{arrange_descending_capacity, exhaustive, rank_of};
use parapack::montecarlo::CampaignSpec;

#[test]
fn descending_order_beats_a_random_placement_on_average() {
    let spec = CampaignSpec::fast(21);
    let modules = 20;
    let mut ranks = Vec::new();
    for i in 0..modules {
        let cfg = spec.module_config(i).unwrap();
        let all = exhaustive(&cfg, 1).unwrap();
        assert_eq!(all.len(), 24);
        let desc = arrange_descending_capacity(&cfg.cells).unwrap();
        let asc: Vec<usize> = desc.iter().rev().copied().collect();
        let rank = rank_of(&desc, &all, "delta_t_max").unwrap();
        assert!(rank < rank_of(&asc, &all, "delta_t_max").unwrap(), "module {i}");
        ranks.push(rank);
    }
    // a random placement averages rank 12.5 of 24
    let mean = ranks.iter().sum::<usize>() as f64 / modules as f64;
    assert!(mean <= 11.0, "ranks {ranks:?}");
}

#[test]
fn module_capacity_does_not_depend_on_placement() {
    let cfg = CampaignSpec::fast(22).module_config(0).unwrap();
    let all = exhaustive(&cfg, 1).unwrap();
    let q: Vec<f64> = all.iter().map(|r| r.q_mod).collect();
    let (lo, hi) = q.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((hi - lo) / lo < 5e-3, "{lo} {hi}");
}
