mod common;

use std::collections::BTreeSet;

use adablock_core::harness::sample_prompt;
use adablock_core::metrics::{detect_late_overhead, detect_premature};
use adablock_core::predictor::Regime;
use adablock_core::scheduler::window_len;
use adablock_core::{
    compute_block_length, decode, denoise, failure_rates, fixed_block_length, linear_sample, segment_regimes,
    threshold_sample, vanilla_sample, BlockSource, CachePolicy, DecodeConfig, MaskPredictor, PredictionFrame,
    RegimeLabel, RegimeThresholds, SamplerChoice, SchedulerKind, SequenceState, SyntheticFieldParams, TokenId,
    Vocabulary,
};
use common::{ngram, sentence_corpus, synthetic};
use proptest::prelude::*;

/// One generation position: confidence, still masked, inside the scope.
type Cell = (f64, bool, bool);

fn cells(max: usize) -> impl Strategy<Value = Vec<Cell>> {
    let conf = prop_oneof![0.0..=1.0f64, (0..=4u8).prop_map(|k| f64::from(k) / 4.0)];
    prop::collection::vec((conf, any::<bool>(), any::<bool>()), 1..max)
}

/// Prompt `[w]`, generation committed where `!masked`, frame confidences
/// from `cells`, and the generation-relative scope.
fn build(cells: &[Cell]) -> (SequenceState, PredictionFrame, Vec<usize>) {
    let p = synthetic(SyntheticFieldParams::default());
    let word = p.content_ids()[0];
    let l = cells.len();
    let state = SequenceState::init(&[word], l, l + 1, p.vocabulary().mask_id()).unwrap();
    let mut frame = PredictionFrame::initial(&state);
    frame.predicted[1..].iter_mut().for_each(|t| *t = word);
    let commit: Vec<usize> = (0..l).filter(|&i| !cells[i].1).map(|i| i + 1).collect();
    let state = state.apply_sample(&frame, &commit).unwrap();
    for (i, c) in cells.iter().enumerate() {
        frame.confidence[i + 1] = c.0;
    }
    let scope = (0..l).filter(|&i| cells[i].2).collect();
    (state, frame, scope)
}

proptest! {
    #[test]
    fn vocabulary_is_a_bijection(words in prop::collection::vec("[a-z]{1,3}", 0..20)) {
        let v = Vocabulary::with_specials(words.iter().cloned());
        prop_assert_ne!(v.mask_id(), v.eos_id());
        prop_assert!((v.mask_id() as usize) < v.size() && (v.eos_id() as usize) < v.size());
        for (id, tok) in v.tokens().iter().enumerate() {
            prop_assert_eq!(v.id(tok), Some(id as TokenId));
            prop_assert_eq!(v.token(id as TokenId), Some(tok.as_str()));
        }
        for w in &words {
            prop_assert!(v.id(w).is_some());
        }
    }

    #[test]
    fn apply_sample_unmasks_monotonically(cells in cells(40), pick in prop::collection::vec(any::<bool>(), 40)) {
        let (state, mut frame, _) = build(&cells);
        let lp = state.prompt_len();
        let masked = state.masked_gen_positions();
        let selected: Vec<usize> = masked.iter().filter(|&&j| pick[j]).map(|&j| lp + j).collect();
        frame.predicted.iter_mut().skip(lp).for_each(|t| *t = 5);
        let next = state.apply_sample(&frame, &selected).unwrap();

        prop_assert_eq!(next.len(), state.len());
        prop_assert_eq!(next.prompt(), state.prompt());
        prop_assert_eq!(next.step(), state.step() - 1);
        prop_assert_eq!(state.masked_count() - next.masked_count(), selected.len());
        for i in 0..state.len() {
            if !state.is_masked(i) {
                prop_assert_eq!(next.tokens()[i], state.tokens()[i]);
            } else if selected.contains(&i) {
                prop_assert_eq!(next.tokens()[i], 5);
            } else {
                prop_assert!(next.is_masked(i));
            }
        }
        // Committed positions can never be selected again.
        if let Some(&c) = (lp..state.len()).filter(|&i| !state.is_masked(i)).collect::<Vec<_>>().first() {
            prop_assert!(state.apply_sample(&frame, &[c]).is_err());
        }
    }

    #[test]
    fn samplers_make_progress_within_scope(cells in cells(48), tau in 0.01..=1.0f64, per_step in 1usize..8) {
        let (state, frame, scope) = build(&cells);
        let masked_scope: BTreeSet<usize> = scope.iter().copied().filter(|&j| state.is_gen_masked(j)).collect();
        for out in [
            threshold_sample(&state, &frame, tau, &scope),
            linear_sample(&state, &frame, per_step, &scope),
            vanilla_sample(&state, &frame, &scope),
        ] {
            prop_assert_eq!(out.is_empty(), masked_scope.is_empty());
            prop_assert!(out.iter().all(|j| masked_scope.contains(j)));
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }
        let lin = linear_sample(&state, &frame, per_step, &scope);
        prop_assert_eq!(lin.len(), per_step.min(masked_scope.len()));
    }

    #[test]
    fn scheduler_decisions_stay_in_range(
        cells in cells(96),
        g_frac in 0.0..1.0f64,
        b0 in 1usize..64,
        tau_d in 0.0..=1.0f64,
        fraction in 0.01..=1.0f64,
        delimiter_tokens in prop::collection::btree_set(2u32..6, 0..4),
        tokens in prop::collection::vec(2u32..6, 96),
    ) {
        let (state, mut frame, _) = build(&cells);
        let l = cells.len();
        for (i, t) in tokens.iter().take(l).enumerate() {
            if state.is_gen_masked(i) {
                frame.predicted[i + 1] = *t;
            }
        }
        let g = ((g_frac * l as f64) as usize).min(l - 1);
        let cfg = DecodeConfig {
            b0, tau_d, window_fraction: fraction, delimiters: delimiter_tokens,
            ..DecodeConfig::default().with_budget(l)
        };
        let d = compute_block_length(&state, &frame, &cfg, g).unwrap();
        let w = window_len(fraction, g, l - g);
        prop_assert!(d.block_size >= 1 && d.block_size <= l - g);
        prop_assert_eq!(d.window, (g, g + w));
        if let BlockSource::Delimiter { pos, conf } = d.source {
            prop_assert!(g <= pos && pos < g + w && g + w <= l);
            prop_assert_eq!(d.block_size, pos - g + 1);
            prop_assert!(conf >= tau_d);
        } else {
            prop_assert_eq!(d.block_size, b0.min(l - g));
        }

        // Anything past the window is invisible to the decision.
        let mut far = frame.clone();
        for i in g + w..l {
            far.predicted[i + 1] = 2;
            far.confidence[i + 1] = 1.0;
        }
        prop_assert_eq!(compute_block_length(&state, &far, &cfg, g).unwrap(), d);

        // Disabled delimiters reduce to the fixed schedule.
        let off = DecodeConfig { tau_d: 1.5, ..cfg.clone() };
        prop_assert_eq!(
            compute_block_length(&state, &frame, &off, g).unwrap().block_size,
            fixed_block_length(&off, g).unwrap().block_size
        );
    }

    #[test]
    fn window_grows_with_g(fraction in 0.01..=1.0f64, l in 1usize..400) {
        let mut prev = 0;
        for g in 0..l {
            let w = window_len(fraction, g, l - g);
            prop_assert!(w >= 1 && w <= l - g);
            if w < l - g {
                prop_assert!(w >= prev);
            }
            prev = w;
        }
    }

    #[test]
    fn synthetic_field_separates_regimes(
        seed in any::<u64>(),
        rate in 0.2..4.0f64,
        period in 0usize..9,
        committed in 0usize..40,
    ) {
        let p = synthetic(SyntheticFieldParams {
            plateau_rate: rate, delimiter_period: period, noise_seed: seed, ..Default::default()
        });
        let word = p.content_ids()[0];
        let l = 48;
        let state = SequenceState::init(&[word], l, 2 * l, p.vocabulary().mask_id()).unwrap();
        let mut frame = PredictionFrame::initial(&state);
        frame.predicted.iter_mut().for_each(|t| *t = word);
        let state = state.apply_sample(&frame, &(1..=committed).collect::<Vec<_>>()).unwrap();
        let masked: Vec<usize> = (1..state.len()).filter(|&i| state.is_masked(i)).collect();

        let a = denoise(&p, &state, &PredictionFrame::initial(&state), &masked, 0..state.len()).unwrap();
        let b = denoise(&synthetic(p.params().clone()), &state, &PredictionFrame::initial(&state), &masked, 0..0).unwrap();
        prop_assert_eq!(&a, &b);

        let regimes = p.regime_map(&state);
        let mut plateau_min = f64::INFINITY;
        let mut floor_max = f64::NEG_INFINITY;
        for &i in &masked {
            let c = a.confidence[i];
            prop_assert!(c > 0.0 && c <= 1.0);
            prop_assert_ne!(a.predicted[i], p.vocabulary().mask_id());
            match regimes[i - 1] {
                Regime::Plateau => plateau_min = plateau_min.min(c),
                Regime::Floor => floor_max = floor_max.max(c),
                Regime::VolatilityBand => {}
            }
        }
        prop_assert!(plateau_min > floor_max);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn ngram_distributions_are_normalised(seed in any::<u64>(), order in 1usize..5, fill in prop::collection::vec(any::<bool>(), 24)) {
        let model = ngram(&sentence_corpus(60, seed), order, 8, None);
        let prompt = sample_prompt(&model, 2, seed).unwrap();
        let state = SequenceState::init(&prompt, 24, 24, model.vocabulary().mask_id()).unwrap();
        let mut frame = PredictionFrame::initial(&state);
        let word = model.vocabulary().id("the").unwrap();
        frame.predicted.iter_mut().for_each(|t| *t = word);
        let commit: Vec<usize> = (0..24).filter(|&i| fill[i]).map(|i| i + prompt.len()).collect();
        let state = state.apply_sample(&frame, &commit).unwrap();
        for pos in (0..state.len()).filter(|&i| state.is_masked(i)) {
            let dist = model.distribution(&state, pos);
            let total: f64 = dist.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "sum {}", total);
            prop_assert!(dist.iter().all(|&p| p >= 0.0));
            prop_assert_eq!(dist[model.vocabulary().mask_id() as usize], 0.0);
        }
    }

    #[test]
    fn decode_accounting_and_determinism(
        seed in 0u64..1000,
        l in 4usize..48,
        b0 in 1usize..20,
        sampler in prop_oneof![Just(SamplerChoice::Vanilla), Just(SamplerChoice::Linear), Just(SamplerChoice::Dynamic)],
        cache in prop_oneof![Just(CachePolicy::NoCache), Just(CachePolicy::PrefixCache), Just(CachePolicy::DualCache)],
        scheduler in prop_oneof![Just(SchedulerKind::Fixed), Just(SchedulerKind::Adaptive)],
        max_steps_frac in 0.2..1.0f64,
    ) {
        let p = synthetic(SyntheticFieldParams { delimiter_period: 5, noise_seed: seed, ..Default::default() });
        let max_steps = ((l as f64 * max_steps_frac) as usize).max(1);
        let cfg = DecodeConfig {
            b0, sampler, cache, scheduler, seed, tau_d: 0.25, linear_steps: (l / 3).max(1),
            ..DecodeConfig::for_vocab(p.vocabulary()).with_budget(l)
        };
        let cfg = DecodeConfig { max_steps, ..cfg };
        let prompt = [p.content_ids()[2]];
        let res = decode(&p, &cfg, &prompt).unwrap();
        prop_assert_eq!(res.denoise_calls, res.trace.len());
        prop_assert!(res.steps_used <= max_steps);
        prop_assert_eq!(res.position_evaluations, res.trace.records.iter().map(|r| r.evaluated.len()).sum::<usize>());
        if res.completed() {
            prop_assert_eq!(res.blocks.iter().map(|b| b.block_size).sum::<usize>(), l);
            prop_assert!(!res.tokens.contains(&p.vocabulary().mask_id()));
        } else {
            let open = res.trace.records.last().map_or(l, |r| r.masked.len() - r.sampled.len());
            prop_assert!(open > 0);
            prop_assert_eq!(res.steps_used, max_steps);
        }
        if sampler == SamplerChoice::Vanilla && res.completed() {
            prop_assert_eq!(res.denoise_calls, l);
        }
        let again = decode(&p, &cfg, &prompt).unwrap();
        prop_assert_eq!(again.trace, res.trace);
        prop_assert_eq!(again.tokens, res.tokens);
    }

    #[test]
    fn empty_delimiter_set_matches_fixed(seed in 0u64..1000, b0 in 1usize..24, cache in prop_oneof![Just(CachePolicy::NoCache), Just(CachePolicy::PrefixCache), Just(CachePolicy::DualCache)]) {
        let p = synthetic(SyntheticFieldParams { delimiter_period: 4, noise_seed: seed, ..Default::default() });
        let base = DecodeConfig { b0, cache, seed, ..DecodeConfig::default().with_budget(40) };
        let prompt = [p.content_ids()[0]];
        let fixed = decode(&p, &DecodeConfig { scheduler: SchedulerKind::Fixed, ..base.clone() }, &prompt).unwrap();
        let adaptive = decode(&p, &DecodeConfig { scheduler: SchedulerKind::Adaptive, ..base }, &prompt).unwrap();
        prop_assert_eq!(fixed.trace, adaptive.trace);
    }

    #[test]
    fn failure_events_are_sound(seed in 0u64..500, b0 in 2usize..24, tau in 0.3..=1.0f64) {
        let model = ngram(&sentence_corpus(120, 9), 3, 8, None);
        let prompt = sample_prompt(&model, 3, seed).unwrap();
        let cfg = DecodeConfig {
            b0, tau, scheduler: SchedulerKind::Fixed, cache: CachePolicy::PrefixCache,
            ..DecodeConfig::for_vocab(model.vocabulary()).with_budget(32)
        };
        let res = decode(&model, &cfg, &prompt).unwrap();
        let rep = failure_rates(&res.trace, tau).unwrap();
        prop_assert!(rep.late_overhead_steps <= rep.total_steps && rep.premature_steps <= rep.total_steps);
        prop_assert!((0.0..=1.0).contains(&rep.late_overhead_rate) && (0.0..=1.0).contains(&rep.premature_rate));
        for r in &res.trace.records {
            if let Some(ev) = detect_late_overhead(r, tau) {
                for &(j, c) in &ev.positions {
                    prop_assert!(!r.in_block(j) && r.masked.contains(&j) && c >= tau && r.confidence[j] == c);
                }
            }
            if let Some(ev) = detect_premature(r, tau) {
                prop_assert!(r.in_block(ev.forced.0) && ev.forced.1 < tau && r.sampled.contains(&ev.forced.0));
                prop_assert!(!r.in_block(ev.outside.0) && ev.outside.1 > ev.forced.1);
            }
        }
    }

    #[test]
    fn regime_labels_partition_and_decoded_is_absorbing(seed in 0u64..500, k in 1usize..5, lo in 0.05..0.4f64, hi in 0.5..0.99f64) {
        let p = synthetic(SyntheticFieldParams { noise_seed: seed, ..Default::default() });
        let cfg = DecodeConfig { b0: 12, ..DecodeConfig::for_vocab(p.vocabulary()).with_budget(36) };
        let res = decode(&p, &cfg, &[p.content_ids()[0]]).unwrap();
        let map = segment_regimes(&res.trace, RegimeThresholds { tau_hi: hi, tau_lo: lo, persistence: k }).unwrap();
        prop_assert_eq!(map.labels.len(), res.trace.len());
        for (row, rec) in map.labels.iter().zip(&res.trace.records) {
            prop_assert_eq!(row.len(), 36);
            for (j, label) in row.iter().enumerate() {
                prop_assert_eq!(*label == RegimeLabel::Decoded, !rec.masked.contains(&j));
            }
        }
        for pair in map.labels.windows(2) {
            for (before, after) in pair[0].iter().zip(&pair[1]) {
                if *before == RegimeLabel::Decoded {
                    prop_assert_eq!(*after, RegimeLabel::Decoded);
                }
            }
        }
    }
}

#[test]
fn ngram_confidence_is_higher_next_to_committed_tokens() {
    // Pre-registered margin: adjacent positions at least 0.05 more confident.
    let model = ngram(&sentence_corpus(400, 21), 3, 16, None);
    let n = 3;
    let (mut near, mut near_n, mut far, mut far_n) = (0.0, 0usize, 0.0, 0usize);
    for seed in 0..100u64 {
        let prompt = sample_prompt(&model, 3, seed).unwrap();
        let cfg = DecodeConfig { b0: 16, seed, ..DecodeConfig::for_vocab(model.vocabulary()).with_budget(48) };
        let res = decode(&model, &cfg, &prompt).unwrap();
        let lp = prompt.len() as isize;
        for r in res.trace.records.iter().filter(|r| r.opens_block) {
            let masked: BTreeSet<isize> = r.masked.iter().map(|&j| j as isize).collect();
            let committed = |j: isize| j >= -lp && j < 48 && !masked.contains(&j);
            for &j in &r.masked {
                let j = j as isize;
                let c = r.confidence[j as usize];
                if committed(j - 1) || committed(j + 1) {
                    near += c;
                    near_n += 1;
                } else if (1..=n).all(|d| !committed(j - d) && !committed(j + d)) {
                    far += c;
                    far_n += 1;
                }
            }
        }
    }
    assert!(near_n > 100 && far_n > 100, "too few samples: {near_n} near, {far_n} far");
    let (near, far) = (near / near_n as f64, far / far_n as f64);
    assert!(near > far + 0.05, "adjacent mean {near:.3} vs distant mean {far:.3}");
}

#[test]
fn dual_cache_keeps_out_of_block_frame_during_block() {
    let p = synthetic(SyntheticFieldParams { plateau_rate: 0.8, noise_seed: 4, ..Default::default() });
    let cfg = DecodeConfig {
        b0: 8,
        cache: CachePolicy::DualCache,
        scheduler: SchedulerKind::Fixed,
        ..DecodeConfig::for_vocab(p.vocabulary()).with_budget(32)
    };
    let res = decode(&p, &cfg, &[p.content_ids()[0]]).unwrap();
    let recs = &res.trace.records;
    let mut in_block_runs = 0;
    for (i, open) in recs.iter().enumerate().filter(|(_, r)| r.opens_block) {
        let cycles: Vec<_> = recs[i + 1..].iter().take_while(|r| !r.opens_block).collect();
        if cycles.len() >= 3 {
            in_block_runs += 1;
        }
        for r in cycles {
            for j in (0..32).filter(|&j| !open.in_block(j)) {
                assert_eq!(r.confidence[j], open.confidence[j]);
            }
        }
    }
    assert!(in_block_runs > 0, "no block had three in-block cycles");
}

#[test]
fn predictor_never_emits_mask() {
    let model = ngram(&sentence_corpus(50, 2), 2, 4, Some(0.3));
    let vocab = model.vocabulary();
    let state = SequenceState::init(&[vocab.id("the").unwrap()], 16, 16, vocab.mask_id()).unwrap();
    let frame = PredictionFrame::initial(&state);
    let pos: Vec<usize> = (1..17).collect();
    let out = denoise(&model, &state, &frame, &pos, 0..17).unwrap();
    for &i in &pos {
        assert_ne!(out.predicted[i], vocab.mask_id());
        assert!(out.confidence[i] > 0.0 && out.confidence[i] <= 1.0);
    }
    assert_eq!(out.evaluated, pos);
}
