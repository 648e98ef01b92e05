//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p geoproto --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use geoproto::config::RunConfig;
use geoproto::pipeline::{Encoded, Pipeline};
use geoproto_core::aggregate::{self, FusionGranularity, FusionWeights, PoolMode, PooledLayout, PoolingPlan};
use geoproto_core::encoder::{concept_conv, ConceptSpec, ConceptTensor, GlobalBaselines, TestKind, CHANNELS};
use geoproto_core::explain::{explain_case, project};
use geoproto_core::grid::{
    extract_samples, DistHint, ExtractConfig, FeatureKind, FeatureMeta, GridSpec, SampleWindow,
};
use geoproto_core::model::{loss, Gradients, Hyperparams, PrototypeModel};
use geoproto_core::stats::{self, BaselineDist, Direction, Scope, TestOutcome};
use geoproto_core::synth::{synth_generate, PatternKind, SynthPattern};
use geoproto_core::train::{self, Example};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn config_in(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.paths.data = dir.join("data");
    cfg.paths.out = dir.join("run");
    cfg.paths.cache = Some(dir.join("cache"));
    cfg
}

fn encoded(cfg: RunConfig) -> (Pipeline, Encoded) {
    let mut p = Pipeline::new(cfg);
    let data = p.data().expect("dataset");
    let enc = p.encode(&data).expect("encoding");
    (p, enc)
}

// 1. statistical tests against closed forms

fn oracle_poisson(c: f64, b: f64) -> (f64, f64) {
    let stat = if c == 0.0 { 2.0 * b } else { 2.0 * (c * (c / b).ln() - c + b) };
    let p = if stat > 0.0 { erfc((stat / 2.0).sqrt()) } else { 1.0 };
    (stat, p)
}

fn oracle_ks(window: &[f64], baseline: &[f64]) -> (f64, f64) {
    let mut ys = window.to_vec();
    ys.sort_by(f64::total_cmp);
    let n = ys.len() as f64;
    let m = baseline.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let f = baseline.iter().filter(|&&b| b <= y).count() as f64 / m;
        let rank = (i + 1) as f64;
        d = d.max(f - (rank - 1.0) / n).max(rank / n - f);
    }
    if d == 0.0 {
        return (0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=10_000u32 {
        let k = k as f64;
        let term = (-2.0 * k * k * n * d * d).exp();
        sum += if k as u32 % 2 == 1 { term } else { -term };
    }
    (d, (2.0 * sum).clamp(0.0, 1.0))
}

fn direction_of(a: f64, b: f64) -> Direction {
    if a > b {
        Direction::Higher
    } else if a < b {
        Direction::Lower
    } else {
        Direction::None
    }
}

fn criterion_1() -> Outcome {
    const CASES: usize = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut ws, mut wp) = (0.0f64, 0.0f64);
    let mut mismatched = 0;

    for _ in 0..CASES {
        let cells = rng.random_range(1..=25usize);
        let rate = rng.random_range(0.01..5.0);
        let expected = rate * cells as f64;
        let c = rng.random_range(0..=(3.0 * expected) as u32 + 3) as f64;
        let alpha = 0.05;
        let got = stats::poisson_lrt_rate(c, cells, rate, alpha).map_err(|e| e.to_string())?;
        let (stat, p) = oracle_poisson(c, expected);
        ws = ws.max((got.statistic - stat).abs());
        wp = wp.max((got.p_value - p).abs());
        let dir = direction_of(c, expected);
        if got.direction != dir || got.significant != (dir != Direction::None && p < alpha) {
            mismatched += 1;
        }
    }

    let (mut ks_s, mut ks_p) = (0.0f64, 0.0f64);
    for case in 0..CASES {
        let m = rng.random_range(2..=300usize);
        let n = rng.random_range(1..=25usize);
        let shift = rng.random_range(-1.0..1.0);
        let tied = case % 3 == 0;
        let draw = |rng: &mut ChaCha8Rng, mu: f64| {
            let v: f64 = mu + rng.random_range(-2.0..2.0) * rng.random::<f64>();
            if tied {
                (v * 4.0).round() / 4.0
            } else {
                v
            }
        };
        let base: Vec<f64> = (0..m).map(|_| draw(&mut rng, 0.0)).collect();
        let window: Vec<f64> = (0..n).map(|_| draw(&mut rng, shift)).collect();
        let dist = BaselineDist::fit("x", Scope::Global, DistHint::Continuous, &base, usize::MAX)
            .map_err(|e| e.to_string())?;
        let got: TestOutcome = stats::ks_test(&window, &dist, 0.05).map_err(|e| e.to_string())?;
        let (d, p) = oracle_ks(&window, &base);
        ks_s = ks_s.max((got.statistic - d).abs());
        ks_p = ks_p.max((got.p_value - p).abs());
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        if got.direction != direction_of(mean(&window), mean(&base)) {
            mismatched += 1;
        }
    }
    let ok = ws <= 1e-9 && wp <= 1e-8 && ks_s <= 1e-9 && ks_p <= 1e-8 && mismatched == 0;
    check(
        ok,
        format!(
            "{CASES}+{CASES} cases; poisson max |dstat| {ws:.1e} |dp| {wp:.1e}; K-S max |dD| {ks_s:.1e} |dp| {ks_p:.1e}; decision mismatches {mismatched}"
        ),
    )
}

// 2. encoder against per-position test calls

fn direct_test(test: TestKind, values: &[f64], base: &BaselineDist, alpha: f64) -> TestOutcome {
    match test {
        TestKind::Poisson => stats::poisson_lrt(values.iter().sum(), values.len(), base, alpha).unwrap(),
        TestKind::Ks => stats::ks_test(values, base, alpha).unwrap(),
    }
}

fn set_bits(out: &mut [u8], g: &TestOutcome, l: Option<&TestOutcome>, idx: impl Fn(usize) -> usize) {
    let bits = [
        g.is_higher(),
        g.is_lower(),
        l.is_some_and(|t| t.is_higher()),
        l.is_some_and(|t| t.is_lower()),
    ];
    for (ch, b) in bits.into_iter().enumerate() {
        if b {
            out[idx(ch)] = 1;
        }
    }
}

fn brute_force_encode(s: &SampleWindow, spec: &ConceptSpec, globals: &GlobalBaselines) -> ConceptTensor {
    let d = s.size;
    let n_map = spec.n_map_features();
    let mut out = ConceptTensor::zeros(d, n_map, spec.n_temporal_features(), spec.n_windows());
    for (fi, f) in spec.features.iter().enumerate() {
        let global = &globals.baselines[fi];
        let obs = s.observations(f.feature);
        let local = (obs.len() >= 2)
            .then(|| BaselineDist::fit(&f.name, Scope::Local, f.test.hint(), &obs, usize::MAX).unwrap());
        for (wi, &w) in spec.window_sizes.iter().enumerate() {
            let h = (w / 2) as isize;
            if f.feature.kind == FeatureKind::Temporal {
                let series = s.temporal_series(f.feature.index);
                let ti = fi - n_map;
                for pos in 0..series.len() as isize {
                    let values: Vec<f64> = (pos - h..=pos + h)
                        .filter(|&i| i >= 0 && (i as usize) < series.len())
                        .map(|i| series[i as usize])
                        .collect();
                    let g = direct_test(f.test, &values, global, spec.alpha);
                    let l = local.as_ref().map(|b| direct_test(f.test, &values, b, spec.alpha));
                    let (ts, tw, tc) = (spec.n_windows(), wi, ti);
                    set_bits(&mut out.temporal, &g, l.as_ref(), |ch| (tc * ts + tw) * CHANNELS + ch);
                }
                continue;
            }
            let map = s.spatial_map(f.feature);
            for row in 0..d as isize {
                for col in 0..d as isize {
                    let mut values = Vec::new();
                    for r in row - h..=row + h {
                        for c in col - h..=col + h {
                            if r >= 0 && c >= 0 && r < d as isize && c < d as isize {
                                let cell = r as usize * d + c as usize;
                                if s.mask[cell] {
                                    values.push(map[cell]);
                                }
                            }
                        }
                    }
                    if values.is_empty() {
                        continue;
                    }
                    let g = direct_test(f.test, &values, global, spec.alpha);
                    let l = local.as_ref().map(|b| direct_test(f.test, &values, b, spec.alpha));
                    let (r, c) = (row as usize, col as usize);
                    let idx = |ch| out.spatial_index(r, c, fi, wi, ch);
                    let idx: Vec<usize> = (0..CHANNELS).map(idx).collect();
                    set_bits(&mut out.spatial, &g, l.as_ref(), |ch| idx[ch]);
                }
            }
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let spec = GridSpec::new(9, 9, 4, 1, 1, 1);
    let pattern = SynthPattern {
        multiplier: 6.0,
        hotspot_prob: 0.1,
        ..Default::default()
    };
    let (ds, _) = synth_generate(2, &spec, &pattern).map_err(|e| e.to_string())?;
    let cfg = ExtractConfig {
        history: 2,
        ..Default::default()
    };
    let samples = extract_samples(&ds, &cfg).map_err(|e| e.to_string())?;
    let cs = ConceptSpec::from_features(ds.features(), vec![3, 5], 0.05);
    let globals = GlobalBaselines::fit(&samples, &cs, usize::MAX).map_err(|e| e.to_string())?;
    let mut differing = 0;
    let mut ones = 0;
    for s in &samples {
        let got = concept_conv(s, &cs, &globals).map_err(|e| e.to_string())?;
        let want = brute_force_encode(s, &cs, &globals);
        ones += want.count_ones();
        if got != want {
            differing += 1;
        }
    }
    check(
        samples.len() == 162 && differing == 0 && ones > 0,
        format!("{} samples, {ones} set bits, {differing} differing tensors", samples.len()),
    )
}

// 3. mean pooling over a ten-cell region

fn criterion_3() -> Outcome {
    let feats = [FeatureMeta::new("events", FeatureKind::Spatial, DistHint::Count)];
    let spec = ConceptSpec::from_features(&feats, vec![3], 0.05);
    let d = 5;
    let cell_region: Vec<usize> = (0..d * d).map(|c| usize::from(c >= 10)).collect();
    let plan = PoolingPlan::from_assignment(d, PoolMode::Mean, vec!["ten".into(), "rest".into()], cell_region)
        .map_err(|e| e.to_string())?;
    let mut c = ConceptTensor::zeros(d, 1, 0, 1);
    for cell in [3, 7] {
        let i = c.spatial_index(cell / d, cell % d, 0, 0, 0);
        c.spatial[i] = 1;
    }
    let w = FusionWeights::uniform(&spec, d, FusionGranularity::PerKind);
    let (pooled, _) = aggregate::aggregate(&c, &w, &plan).map_err(|e| e.to_string())?;
    let layout = PooledLayout::new(&spec, &plan);
    let i = (0..layout.dim())
        .find(|&i| {
            let x = layout.describe(i);
            x.region == Some(0) && x.channel == 0
        })
        .ok_or("region entry missing")?;
    check(
        plan.region_size(0) == 10 && pooled[i] == 0.2,
        format!("region of {} cells pools to {:?}", plan.region_size(0), pooled[i]),
    )
}

// 4. fusion weights stay on the simplex

fn criterion_4(enc: &Encoded, cfg: &RunConfig) -> Outcome {
    let train_set = enc.examples(&enc.index.train);
    let validation = enc.examples(&enc.index.validation);
    let plan = cfg.pooling_plan(PoolMode::Mean).map_err(|e| e.to_string())?;
    let model = train::init_model(enc.spec.clone(), plan, cfg.pooling.fusion, cfg.hyperparams(cfg.seed), &train_set)
        .map_err(|e| e.to_string())?;
    let mut steps = 0usize;
    let mut worst: f64 = 0.0;
    let out = train::train(model, &train_set, &validation, |m| {
        steps += 1;
        let w = m.fusion.weights();
        for group in w.chunks(m.fusion.n_windows) {
            worst = worst.max((group.iter().sum::<f64>() - 1.0).abs());
        }
    })
    .map_err(|e| e.to_string())?;
    check(
        steps > 0 && worst <= 1e-6,
        format!("{steps} steps over {} epochs, max |sum - 1| {worst:.1e}", out.history.len()),
    )
}

// 5. finite-difference gradients

fn random_instance(seed: u64) -> (PrototypeModel, Vec<ConceptTensor>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feats = [
        FeatureMeta::new("calls", FeatureKind::Spatiotemporal, DistHint::Count),
        FeatureMeta::new("elevation", FeatureKind::Spatial, DistHint::Continuous),
        FeatureMeta::new("rain", FeatureKind::Temporal, DistHint::Continuous),
    ];
    let spec = ConceptSpec::from_features(&feats, vec![3, 5], 0.05);
    let mode = [PoolMode::Mean, PoolMode::Max, PoolMode::None][seed as usize % 3];
    let granularity = if seed.is_multiple_of(2) {
        FusionGranularity::PerKind
    } else {
        FusionGranularity::PerFeature
    };
    let plan = PoolingPlan::default_for(9, mode).unwrap();
    let mut fusion = FusionWeights::uniform(&spec, 9, granularity);
    for l in fusion.logits.iter_mut() {
        *l = rng.random_range(-1.0..1.0);
    }
    let hyper = Hyperparams {
        prototypes: 4,
        ..Default::default()
    };
    let dim = PooledLayout::new(&spec, &plan).dim();
    let protos = (0..4 * dim).map(|_| rng.random_range(0.0..0.6)).collect();
    let mut model = PrototypeModel::new(spec.clone(), plan, fusion, hyper, protos).unwrap();
    for w in model.head.iter_mut() {
        *w += rng.random_range(-0.3..0.3);
    }
    model.bias = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    let mut tensors = Vec::new();
    for _ in 0..6 {
        let mut t = ConceptTensor::zeros(9, spec.n_map_features(), spec.n_temporal_features(), 2);
        for b in t.spatial.iter_mut().chain(t.temporal.iter_mut()) {
            *b = rng.random_bool(0.25) as u8;
        }
        tensors.push(t);
    }
    let labels = (0..6).map(|i| (i % 2) as u8).collect();
    (model, tensors, labels)
}

fn fd_worst(model: &PrototypeModel, tensors: &[ConceptTensor], labels: &[u8]) -> f64 {
    const H: f64 = 1e-5;
    let batch: Vec<Example<'_>> = tensors.iter().zip(labels).map(|(t, &y)| (t, y)).collect();
    let total = |m: &PrototypeModel| loss(m, &batch, None).unwrap().total;
    let mut g = Gradients::zeros(model);
    loss(model, &batch, Some(&mut g)).unwrap();
    type Access = fn(&mut PrototypeModel) -> &mut [f64];
    let groups: [(Access, &[f64]); 4] = [
        (|m| &mut m.prototypes[..], &g.prototypes),
        (|m| &mut m.head[..], &g.head),
        (|m| &mut m.bias[..], &g.bias),
        (|m| &mut m.fusion.logits[..], &g.fusion),
    ];
    let mut worst: f64 = 0.0;
    for (access, analytic) in groups {
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = model.clone();
            access(&mut plus)[i] += H;
            let mut minus = model.clone();
            access(&mut minus)[i] -= H;
            let n = (total(&plus) - total(&minus)) / (2.0 * H);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-3));
        }
    }
    worst
}

fn criterion_5() -> Outcome {
    const INSTANCES: u64 = 24;
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let (model, tensors, labels) = random_instance(100 + seed);
        worst = worst.max(fd_worst(&model, &tensors, &labels));
    }
    check(worst <= 1e-4, format!("{INSTANCES} instances, max relative error {worst:.2e}"))
}

// 6. learnability on planted hotspots

fn criterion_6(p: &Pipeline, enc: &Encoded, started: Instant) -> Outcome {
    let (archive, history, best) = p.fit(enc, PoolMode::Mean, p.cfg.seed).map_err(|e| e.to_string())?;
    let m = train::evaluate(&archive.model, &enc.examples(&enc.index.validation)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(
        m.accuracy >= 0.85 && m.f1 >= 0.80 && history.len() <= 50 && elapsed < Duration::from_secs(300),
        format!(
            "validation ACC {:.4} F1 {:.4} (best epoch {best} of {}), {:.1?} including synthesis and encoding",
            m.accuracy,
            m.f1,
            history.len(),
            elapsed
        ),
    )
}

// 7. pooling ablation on the heterogeneous corpus

fn criterion_7() -> Outcome {
    let dir = tempdir();
    let mut cfg = config_in(dir.path());
    cfg.synth.pattern = SynthPattern {
        kind: PatternKind::Regimes,
        background_rate: 2.0,
        multiplier: 4.0,
        hotspot_prob: 0.04,
        hotspot_radius: 1,
    };
    let (mut p, enc) = encoded(cfg);
    let rows = p
        .ablation(&enc, &[PoolMode::Mean, PoolMode::Max, PoolMode::None])
        .map_err(|e| e.to_string())?;
    let f1: Vec<f64> = rows.iter().map(|r| r.mean.f1).collect();
    let per_seed: Vec<String> = rows
        .iter()
        .map(|r| {
            let runs: Vec<String> = r.runs.iter().map(|m| format!("{:.3}", m.f1)).collect();
            format!("{} [{}]", r.pooling, runs.join(" "))
        })
        .collect();
    check(
        f1[0] >= f1[1] && f1[1] >= f1[2],
        format!(
            "test F1 mean over {} seeds: spatial {:.4} max {:.4} none {:.4}; {}",
            rows[0].seeds.len(),
            f1[0],
            f1[1],
            f1[2],
            per_seed.join("; ")
        ),
    )
}

// 8. projection against an exhaustive scan

fn criterion_8(p: &Pipeline, enc: &Encoded) -> Outcome {
    let (archive, _, _) = p.fit(enc, PoolMode::Mean, p.cfg.seed).map_err(|e| e.to_string())?;
    let model = &archive.model;
    let ids = &enc.index.train;
    let encodings = Pipeline::pooled(&archive, enc, ids).map_err(|e| e.to_string())?;
    let meta = enc.meta(ids);
    let projected = project(model, &encodings, &meta, 5).map_err(|e| e.to_string())?;
    let eps = model.hyper.eps_sim;
    let mut wrong = 0;
    for pp in &projected {
        let proto = model.prototype(pp.k);
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in encodings.iter().enumerate() {
            let d2: f64 = e.iter().zip(proto).map(|(a, b)| (a - b) * (a - b)).sum();
            let s = 1.0 / (d2 + eps);
            let better = match best {
                None => true,
                Some((j, bs)) => s > bs || (s == bs && meta[i].id < meta[j].id),
            };
            if better {
                best = Some((i, s));
            }
        }
        let (i, s) = best.ok_or("no training encodings")?;
        if i != pp.position || s != pp.similarity {
            wrong += 1;
        }
    }
    check(
        wrong == 0,
        format!("{} prototypes scanned over {} training encodings, {wrong} disagreements", projected.len(), encodings.len()),
    )
}

// 9. contributions reconstruct logits

fn criterion_9(p: &Pipeline, enc: &Encoded) -> Outcome {
    let (archive, _, _) = p.fit(enc, PoolMode::Mean, p.cfg.seed).map_err(|e| e.to_string())?;
    let encodings = Pipeline::pooled(&archive, enc, &enc.index.test).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for e in &encodings {
        let r = explain_case(&archive.model, e, 10).map_err(|e| e.to_string())?;
        let z = r.reconstructed_logits();
        for (a, b) in z.iter().zip(&r.logits) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-6, format!("{} test cases, max |error| {worst:.1e}", encodings.len()))
}

// 10. determinism of whole runs

fn criterion_10() -> Outcome {
    let run = || -> Result<(tempfile::TempDir, Vec<Vec<u8>>), String> {
        let dir = tempdir();
        let mut p = Pipeline::new(config_in(dir.path()));
        p.all().map_err(|e| e.to_string())?;
        let files = ["model.gpn", "metrics.json", "metrics.txt"]
            .iter()
            .map(|f| fs::read(dir.path().join("run").join(f)).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        Ok((dir, files))
    };
    let (_a, first) = run()?;
    let (_b, second) = run()?;
    check(
        first == second,
        format!(
            "model.gpn ({} bytes), metrics.json, metrics.txt {}",
            first[0].len(),
            if first == second { "identical" } else { "differ" }
        ),
    )
}

// 11. regulariser directions on a separable toy set

fn toy_set(n: usize, seed: u64) -> Vec<(ConceptTensor, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let y = (i % 2) as u8;
            let mut c = ConceptTensor::zeros(5, 1, 0, 2);
            let (r, col) = if y == 1 { (2, 2) } else { (rng.random_range(0..2), rng.random_range(0..2)) };
            for w in 0..2 {
                let idx = c.spatial_index(r, col, 0, w, 0);
                c.spatial[idx] = 1;
                let noise = c.spatial_index(rng.random_range(0..5), rng.random_range(0..5), 0, w, 1);
                c.spatial[noise] = rng.random_bool(0.3) as u8;
            }
            (c, y)
        })
        .collect()
}

fn criterion_11() -> Outcome {
    let feats = [FeatureMeta::new("events", FeatureKind::Spatial, DistHint::Count)];
    let spec = ConceptSpec::from_features(&feats, vec![1, 3], 0.05);
    let data = toy_set(120, 11);
    let ex: Vec<Example<'_>> = data.iter().map(|(c, y)| (c, *y)).collect();
    let fit = |lambda_diversity: f64| {
        let hyper = Hyperparams {
            prototypes: 6,
            lambda_diversity,
            batch_size: 32,
            seed: 3,
            ..Default::default()
        };
        let plan = PoolingPlan::default_for(5, PoolMode::Mean).unwrap();
        let model = train::init_model(spec.clone(), plan, FusionGranularity::PerKind, hyper, &ex).unwrap();
        train::train(model, &ex, &ex, |_| {}).unwrap().model
    };
    let with = fit(Hyperparams::default().lambda_diversity);
    let without = fit(0.0);
    let (dw, d0) = (with.min_prototype_distance(), without.min_prototype_distance());

    let mut same = 0;
    for (c, y) in &ex {
        let v = with.pool(c).map_err(|e| e.to_string())?;
        let nearest = (0..with.k())
            .map(|k| {
                let d2: f64 = v.iter().zip(with.prototype(k)).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, k)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap()
            .1;
        same += usize::from(with.class_of[nearest] == *y);
    }
    let frac = same as f64 / ex.len() as f64;
    check(
        dw >= d0 && frac >= 0.9,
        format!("min prototype distance {dw:.4} with diversity vs {d0:.4} without; same-class nearest prototype {:.1}%", 100.0 * frac),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, started: Instant, outcome: Outcome, limit: Option<u64>| {
        let elapsed = started.elapsed();
        let over = limit.is_some_and(|s| elapsed > Duration::from_secs(s));
        let (ok, detail) = match outcome {
            Ok(d) => (!over, d),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        let limit = limit.map_or(String::new(), |s| format!(", limit {s}s"));
        println!(
            "criterion {n:>2}: {} {detail} [{:.2?}{limit}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed
        );
    };

    let t = Instant::now();
    report(1, t, criterion_1(), Some(10));
    let t = Instant::now();
    report(2, t, criterion_2(), Some(60));
    let t = Instant::now();
    report(3, t, criterion_3(), None);

    let dir = tempdir();
    let t = Instant::now();
    let cfg = config_in(dir.path());
    let (p, enc) = encoded(cfg.clone());
    report(6, t, criterion_6(&p, &enc, t), Some(300));
    let t = Instant::now();
    report(4, t, criterion_4(&enc, &cfg), None);
    let t = Instant::now();
    report(5, t, criterion_5(), Some(30));
    let t = Instant::now();
    report(7, t, criterion_7(), None);
    let t = Instant::now();
    report(8, t, criterion_8(&p, &enc), None);
    let t = Instant::now();
    report(9, t, criterion_9(&p, &enc), None);
    let t = Instant::now();
    report(10, t, criterion_10(), None);
    let t = Instant::now();
    report(11, t, criterion_11(), None);

    println!("acceptance: {} of 11 criteria passed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
