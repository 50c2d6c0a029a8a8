// temporary ablation direction probe
use prodehaze_cli::commands::cmd_ablate;
use prodehaze_cli::config::RunConfig;
use prodehaze_cli::dataset::{synthesize_pair_for_index, write_pair};

#[test]
fn ablation_direction_probe() {
    for seed in [7u64, 101, 2024] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.dataset_root = dir.path().join("data");
        cfg.out_dir = dir.path().join("out");
        cfg.synth.count = 16;
        cfg.synth.beta_range = (0.6, 1.6);
        cfg.synth.atmospheric_tint = [1.0, 0.8, 0.65];
        cfg.synth.tint_shuffle = true;
        cfg.train.hcr.steps = 600;
        for sub in ["clean", "hazy", "meta"] {
            std::fs::create_dir_all(cfg.dataset_root.join(sub)).unwrap();
        }
        let ranges = cfg.synth.haze_ranges();
        for i in 0..cfg.synth.count {
            let p = synthesize_pair_for_index(cfg.seed, i, 32, 32, &ranges).unwrap();
            write_pair(&cfg.dataset_root, &p).unwrap();
        }
        let report = cmd_ablate(&cfg).unwrap();
        let base = report.row("no-prompt_no-mask").unwrap().mean_ciede2000;
        let full = report.row("prompt_mask").unwrap().mean_ciede2000;
        for row in &report.rows {
            println!(
                "seed {seed} {:20} psnr {:6.2}  ssim {:.4}  ciede {:7.3}",
                row.name, row.mean_psnr_db, row.mean_ssim, row.mean_ciede2000
            );
        }
        println!("seed {seed}: base-full CIEDE delta = {:+.4}", base - full);
    }
}
