//! Full-pipeline smoke test on a micro world: units are separable, the
//! translation model learns, the vocoder round-trips audio, and ASR-BLEU of
//! the composed pipeline is high.

use std::collections::BTreeMap;
use std::time::Instant;

use tonevox::discretize::{mean_normalize, quantize};
use tonevox::eval::{asr_bleu, gold_unit_bleu, symbol_recovery, AsrBleuOptions};
use tonevox::pipeline::{
    run_s2mu_training, run_vocoder_training, uniform_plan, DeskWorld, PrepareOptions,
    S2MUTrainOptions, VocoderTrainOptions,
};
use tonevox::s2mu::{evaluate_model, S2MUConfig, S2MUModel, S2MUTrainer, TrainerConfig};
use tonevox::synthlang::{synthesize_utterance, WorldConfig};
use tonevox::vocoder::{VocoderBundle, VocoderTrainer};

#[test]
fn micro_world_end_to_end() {
    let t0 = Instant::now();
    let world = WorldConfig::new(2024, 1, 2, 6, 8000, 0.08)
        .shared_fraction(0.5)
        .build()
        .unwrap();
    let feature_cfg = DeskWorld::default_feature_config(&world);
    let desk = DeskWorld::prepare(world, feature_cfg, PrepareOptions::default()).unwrap();
    eprintln!("[smoke] prepare: {:.1?}", t0.elapsed());

    // per-cluster purity with the pipeline quantizer: each cluster dominated
    // by one symbol on steady-tone audio
    let family = desk.world.families[0].id;
    let model = &desk.kmeans[&family];
    // class label is the tone frequency: family-shared symbols carry
    // different per-language ids but are the same sound
    let mut cluster_counts: BTreeMap<u32, BTreeMap<u64, usize>> = BTreeMap::new();
    for lang in desk.world.families[0].members.clone() {
        for s in 0..6u32 {
            let freq = desk.world.frequency_of(lang, s).unwrap().to_bits();
            for speaker in 0..desk.world.num_speakers {
                let wave = synthesize_utterance(lang, &[s; 4], speaker, &desk.world).unwrap();
                let feats = mean_normalize(&desk.features_of(&wave).unwrap());
                let units = quantize(&feats, model).unwrap();
                for &u in &units {
                    *cluster_counts.entry(u).or_default().entry(freq).or_insert(0) += 1;
                }
            }
        }
    }
    let mut pure = 0usize;
    let mut total = 0usize;
    for (_, counts) in cluster_counts {
        pure += counts.values().max().copied().unwrap_or(0);
        total += counts.values().sum::<usize>();
    }
    let purity = pure as f64 / total as f64;
    eprintln!("[smoke] cluster purity {purity:.4}");
    assert!(purity >= 0.99, "purity {purity}");

    // cross-speaker unit stability after dedup
    let mut stable = 0usize;
    let mut checked = 0usize;
    for lang in desk.world.families[0].members.clone() {
        for trial in 0..25u64 {
            let symbols: Vec<u32> = (0..5).map(|i| ((trial as u32) * 3 + i) % 6).collect();
            let w0 = synthesize_utterance(lang, &symbols, 0, &desk.world).unwrap();
            let w1 = synthesize_utterance(lang, &symbols, 1, &desk.world).unwrap();
            let u0 = desk.units_of(&w0, family, lang).unwrap();
            let u1 = desk.units_of(&w1, family, lang).unwrap();
            checked += 1;
            if u0.units == u1.units {
                stable += 1;
            }
        }
    }
    let stability = stable as f64 / checked as f64;
    eprintln!("[smoke] cross-speaker dedup stability {stability:.4}");
    assert!(stability >= 0.9, "stability {stability}");

    // translation model
    let train_plan = uniform_plan(&desk.world, 250, 71, (2, 8)).unwrap();
    let test_plan = uniform_plan(&desk.world, 15, 72_000, (2, 8)).unwrap();
    let t1 = Instant::now();
    let dataset = desk.s2mu_dataset(&train_plan).unwrap();
    let heldout = desk.s2mu_dataset(&test_plan).unwrap();
    eprintln!("[smoke] datasets: {:.1?} ({} train)", t1.elapsed(), dataset.len());

    let cfg = S2MUConfig::desk_default(feature_cfg.n_bands, 5);
    let model = S2MUModel::new(cfg, desk.vocab.clone()).unwrap();
    eprintln!("[smoke] s2mu params: {}", model.num_parameters());
    let mut trainer = S2MUTrainer::new(model, TrainerConfig::default());
    let t2 = Instant::now();
    run_s2mu_training(
        &mut trainer,
        &dataset,
        &desk.masks,
        S2MUTrainOptions { steps: 2000, batch_size: 16, sampler_seed: 3, report_every: 200 },
        |step, r| eprintln!("[smoke] s2mu step {step}: loss {:.4} acc {:.3}", r.loss, r.token_accuracy),
    )
    .unwrap();
    eprintln!("[smoke] s2mu train: {:.1?}", t2.elapsed());
    let eval = evaluate_model(&trainer.model, &heldout, &desk.masks).unwrap();
    eprintln!("[smoke] held-out token accuracy {:.4}", eval.token_accuracy);
    assert!(eval.token_accuracy > 0.9, "accuracy {}", eval.token_accuracy);

    // vocoder
    let t3 = Instant::now();
    let items = desk.vocoder_items(family, &train_plan[..300.min(train_plan.len())]).unwrap();
    let vcfg = desk.vocoder_config(family, 77).unwrap();
    let bundle = VocoderBundle::new(vcfg).unwrap();
    let mut vtrainer = VocoderTrainer::new(bundle);
    run_vocoder_training(
        &mut vtrainer,
        &items,
        VocoderTrainOptions { steps: 600, batch_size: 8, report_every: 100 },
        |step, mel| eprintln!("[smoke] vocoder step {step}: mel L1 {mel:.4}"),
    )
    .unwrap();
    eprintln!("[smoke] vocoder train: {:.1?} ({} items)", t3.elapsed(), items.len());

    let recovery = symbol_recovery(&desk, &vtrainer.bundle, &test_plan, 0).unwrap();
    eprintln!("[smoke] vocoder symbol recovery {recovery:.4}");
    assert!(recovery >= 0.9, "recovery {recovery}");

    // composed pipeline
    let mut vocoders = BTreeMap::new();
    vocoders.insert(family, vtrainer.bundle);
    let t4 = Instant::now();
    let gold = gold_unit_bleu(&desk, &vocoders, &test_plan, AsrBleuOptions::default()).unwrap();
    let full = asr_bleu(&desk, &trainer.model, &vocoders, &test_plan, AsrBleuOptions::default())
        .unwrap();
    eprintln!(
        "[smoke] gold-unit BLEU {:.2}, full-pipeline BLEU {:.2} ({:.1?})",
        gold.macro_avg,
        full.macro_avg,
        t4.elapsed()
    );
    // gold units upper-bound the full pipeline
    assert!(gold.macro_avg + 1e-9 >= full.macro_avg);
    assert!(full.macro_avg >= 60.0, "pipeline BLEU {}", full.macro_avg);
    eprintln!("[smoke] total {:.1?}", t0.elapsed());
}
