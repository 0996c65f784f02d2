use bida_core::losses::gradcheck::{stabilizer_gradcheck, StabilizerCheckSize};
use bida_core::stabilizer::StabilizerConfig;

#[test]
fn full_model_three_seeds() {
    for seed in [1, 2, 3] {
        let t = std::time::Instant::now();
        let r = stabilizer_gradcheck(
            seed,
            StabilizerCheckSize::default(),
            StabilizerConfig::default(),
        )
        .unwrap();
        let worst = r
            .probes
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
            .unwrap();
        eprintln!(
            "seed {seed}: max {:.3e} mean {:.3e} ({}) in {:?}",
            r.max_rel_err,
            r.mean_rel_err,
            worst.label,
            t.elapsed()
        );
        assert!(r.passes(1e-6));
    }
}
