//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! fails if any criterion that the implementation controls fails.

use std::path::Path;
use std::time::Instant;

use acc_core::alignment::{audio_window, frame_times, label_frames, FrameExample};
use acc_core::config::RunConfig;
use acc_core::corpus::{synthesize_corpus, Gender, Interval, Manifest, SynthSpec, Transcript};
use acc_core::encoders::nn::Ctx;
use acc_core::evaluation::{emit_report, macro_avg, macro_f1, majority_baseline, prf, ConfusionMatrix, Prf, ReportFormat};
use acc_core::experiment::{eval_checkpoint, train_fold, FoldExamples, Split};
use acc_core::model::{contrastive_loss, lookup, registry, total_loss, Batch, Model, ModelConfig, Negatives};
use acc_core::phonology::{Assignment, Dimension, Phoneme, PhonemeMap, INVENTORY, REFERENCE_TABLE};
use acc_core::training::{make_folds, FoldPolicy, TrainOptions, TrainOutcome};
use acc_tensor::gradcheck::{check, suite};
use acc_tensor::{ParamStore, Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const OP_TRIALS: usize = 100;
const E2E_PARAMS: usize = 200;
const GRAD_BUDGET_S: f64 = 300.0;
const ALIGN_INSTANCES: usize = 500;
const IDENTITY_TOL: f64 = 1e-12;
const AVG_TOL: f64 = 0.005;
const F1_FLOOR: f64 = 0.55;
const BASELINE_FACTOR: f64 = 1.5;
const SMOKE_BUDGET_S: f64 = 600.0;

struct Line {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    /// A failure that lies outside the implementation (the reference numbers).
    external: bool,
}

fn line(id: u8, name: &'static str, pass: bool, detail: String) -> Line {
    Line { id, name, pass, detail, external: false }
}

// ---------------------------------------------------------------- 1

fn e2e_cfg(mode: &str) -> ModelConfig {
    let mut c = ModelConfig::default();
    c.mode.mode = mode.into();
    c.mode.dimension = Dimension::Manner;
    c.mode.t = 2;
    c.mode.d = 8;
    c.vit.image_size = 32;
    c.vit.embed_dim = 8;
    c.vit.depth = 1;
    c.vit.heads = 2;
    c.vit.mlp_dim = 16;
    c.vit.dropout = 0.0;
    c.audio.conv[0].channels = 4;
    c.audio.conv[1].channels = 8;
    c.audio.hidden = 8;
    c.audio.depth = 1;
    c.audio.heads = 2;
    c.audio.mlp_dim = 16;
    c.audio.frozen = false;
    c
}

fn random_examples(n: usize, rng: &mut ChaCha8Rng) -> Vec<FrameExample> {
    (0..n)
        .map(|i| FrameExample {
            utterance_id: "u".into(),
            speaker_id: "s".into(),
            frame_index: i,
            frame: (0..32 * 32).map(|_| rng.gen()).collect(),
            audio_window: Some((0..1067).map(|_| rng.gen_range(-8000..8000)).collect()),
            labels: [Some(i % 6), Some(i % 8), Some(i % 3)],
        })
        .collect()
}

fn criterion_1() -> Line {
    let t = Instant::now();
    let ops = suite::run_all(OP_TRIALS, FD_STEP, 11).expect("op suite runs");
    let worst_op = ops.iter().map(|o| (o.max_rel_err, o.op)).fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let ops_ok = ops.iter().all(|o| o.checked > 0 && o.max_rel_err < FD_TOL);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut modes = Vec::new();
    let mut modes_ok = true;
    for mode in registry() {
        let cfg = e2e_cfg(mode.name());
        let mut model = Model::new(&cfg, 1067, &[30.0, 10.0, 5.0, 20.0, 8.0, 40.0], 3).unwrap();
        // Move away from the zero-initialized head so every gradient is non-trivial.
        for p in model.store.iter_mut() {
            for v in p.value_mut().data_mut() {
                *v += 0.1 * rng.gen_range(-1.0..1.0);
            }
        }
        let ex = random_examples(4, &mut rng);
        let refs: Vec<&FrameExample> = ex.iter().collect();
        let batch = Batch::from_examples(&refs, Dimension::Manner, &cfg.vit, mode.uses_video(), mode.uses_audio()).unwrap();
        let mut store = std::mem::replace(&mut model.store, ParamStore::new());
        let ids: Vec<_> = store.ids().collect();
        let report = check(&mut store, &ids, FD_STEP, E2E_PARAMS, &mut rng, |tape, s| {
            model
                .loss_with(s, tape, &mut Ctx::eval(), &batch)
                .map(|l| l.total)
                .map_err(|e| TensorError::InvalidArgument(e.to_string()))
        })
        .unwrap();
        modes_ok &= report.checked >= E2E_PARAMS && report.passed(FD_TOL);
        modes.push(format!("{} {}@{:.1e}", mode.name(), report.checked, report.max_rel_err));
    }
    let secs = t.elapsed().as_secs_f64();
    line(
        1,
        "gradient suite",
        ops_ok && modes_ok && secs < GRAD_BUDGET_S,
        format!(
            "{} ops x {OP_TRIALS} trials, worst {} {:.1e}; end-to-end [{}]; tol {FD_TOL:.0e}; {secs:.1}s",
            ops.len(),
            worst_op.1,
            worst_op.0,
            modes.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 2

fn random_transcript(rng: &mut ChaCha8Rng) -> Transcript {
    let mut t = 0.0;
    let mut intervals = Vec::new();
    for _ in 0..rng.gen_range(0..30) {
        t += rng.gen_range(0..30) as f64 * 0.01;
        let start = t;
        t += rng.gen_range(1..25) as f64 * 0.01;
        let k = rng.gen_range(0..=INVENTORY.len());
        let phoneme = if k == INVENTORY.len() { Phoneme::silence() } else { Phoneme::normalize(INVENTORY[k]).unwrap() };
        intervals.push(Interval { start_s: start, end_s: t, phoneme });
    }
    Transcript { intervals }
}

fn scan_label(t: &Transcript, mid: f64, dim: Dimension, map: &PhonemeMap) -> Option<usize> {
    for iv in &t.intervals {
        if iv.start_s <= mid && mid < iv.end_s {
            return match map.class_of(&iv.phoneme, dim).unwrap() {
                Assignment::Class(c) => Some(c.index),
                Assignment::Excluded => None,
            };
        }
    }
    Some(0)
}

fn criterion_2() -> Line {
    let map = PhonemeMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut label_ok, mut window_ok, mut frames) = (0, 0, 0);
    for _ in 0..ALIGN_INSTANCES {
        let tr = random_transcript(&mut rng);
        let fps = [10.0, 15.0, 23.18, 25.0, 29.97, 30.0, 50.0][rng.gen_range(0..7)];
        let duration = tr.duration() + rng.gen_range(0.0..1.0);
        let n = (duration * fps).floor() as usize;
        let times = frame_times(n, fps);
        frames += n;
        let mut same = true;
        for dim in Dimension::ALL {
            let got = label_frames(&tr, &times, fps, dim, &map).unwrap();
            let want: Vec<_> = times.iter().map(|&t| scan_label(&tr, t + 0.5 / fps, dim, &map)).collect();
            same &= got == want;
        }
        label_ok += same as usize;

        let sr = [8000u32, 16000, 44100][rng.gen_range(0..3)];
        let w = rng.gen_range(1..3000);
        let samples: Vec<i16> = (0..(duration * sr as f64) as usize).map(|i| (i % 97) as i16 + 1).collect();
        let all_fit = times.iter().chain([0.0, duration, -0.2, duration + 0.2].iter()).all(|&t| {
            let span = audio_window(t, sr, w);
            let x = span.extract(&samples);
            let (l, r) = span.padding(samples.len());
            x.len() == w && x.iter().filter(|&&s| s == 0).count() == l + r
        });
        window_ok += all_fit as usize;
    }
    line(
        2,
        "alignment oracle",
        label_ok == ALIGN_INSTANCES && window_ok == ALIGN_INSTANCES,
        format!("labels equal brute force on {label_ok}/{ALIGN_INSTANCES} instances ({frames} frames x 3 dims); windows exact length on {window_ok}/{ALIGN_INSTANCES}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Line {
    let map = PhonemeMap::default();
    let mut wrong = Vec::new();
    for &(p, dim, class) in REFERENCE_TABLE {
        let got = match map.class_of_symbol(p, dim).unwrap() {
            Assignment::Class(c) => c.name(),
            Assignment::Excluded => "excluded",
        };
        if got != class {
            wrong.push(format!("{p}/{dim}: {got} != {class}"));
        }
    }
    let sizes = Dimension::ALL.map(|d| d.n_classes());
    line(
        3,
        "phonology fidelity",
        wrong.is_empty() && sizes == [6, 8, 3],
        format!("{} table pairs, {} mismatches {:?}; class counts {:?}", REFERENCE_TABLE.len(), wrong.len(), wrong, sizes),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f64> = (0..3 * 2 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let neg: Vec<f64> = data.iter().map(|v| -v).collect();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[3, 2, 5], data).unwrap());
    let nx = tape.constant(Tensor::new(&[3, 2, 5], neg).unwrap());
    let same = contrastive_loss(&mut tape, x, x, Negatives::None, 0.0).unwrap();
    let opp = contrastive_loss(&mut tape, x, nx, Negatives::None, 0.0).unwrap();
    let same = tape.value(same).item().unwrap();
    let opp = tape.value(opp).item().unwrap();

    let (b, c) = (5, 6);
    let logits_data: Vec<f64> = (0..b * c).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..b).map(|i| (i * 7) % c).collect();
    let mask = vec![1.0, 1.0, 0.0, 1.0, 1.0];
    let logits = tape.constant(Tensor::new(&[b, c], logits_data).unwrap());
    let w = tape.constant(Tensor::new(&[c], vec![0.5, 1.5, 1.0, 0.8, 1.2, 1.0]).unwrap());
    let lp = total_loss(&mut tape, logits, &labels, &mask, w, Some((x, nx)), 0.0, Negatives::None, 0.0).unwrap();
    let ce = tape.weighted_cross_entropy(logits, w, &labels, &mask).unwrap();
    let bitwise = tape.value(lp.total).item().unwrap().to_bits() == tape.value(ce).item().unwrap().to_bits();

    let zeros = tape.constant(Tensor::zeros(&[b, c]));
    let ones = tape.constant(Tensor::ones(&[c]));
    let uni = tape.weighted_cross_entropy(zeros, ones, &labels, &[1.0; 5]).unwrap();
    let uni = tape.value(uni).item().unwrap();
    let ln_c = (c as f64).ln();

    let pass = same.abs() < IDENTITY_TOL && (opp - 2.0).abs() < IDENTITY_TOL && bitwise && (uni - ln_c).abs() < IDENTITY_TOL;
    line(
        4,
        "loss identities",
        pass,
        format!(
            "cos(x,x)={same:.1e}, cos(x,-x)-2={:.1e}, lambda=0 bitwise={bitwise}, CE(0)-lnC={:.1e}",
            opp - 2.0,
            uni - ln_c
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Per-class (P, R, F1) for uniV, uniA, fusion and Contrast, then the printed AVG row.
type ResultTable = (&'static str, &'static [[f64; 12]], [f64; 12]);

const MANNER: &[[f64; 12]] = &[
    [0.69, 0.62, 0.65, 0.81, 0.69, 0.75, 0.87, 0.81, 0.84, 0.91, 0.87, 0.89],
    [0.50, 0.55, 0.52, 0.60, 0.58, 0.59, 0.75, 0.72, 0.73, 0.85, 0.88, 0.86],
    [0.52, 0.50, 0.51, 0.60, 0.62, 0.61, 0.72, 0.70, 0.71, 0.85, 0.80, 0.82],
    [0.48, 0.50, 0.49, 0.55, 0.57, 0.56, 0.70, 0.68, 0.69, 0.80, 0.85, 0.82],
    [0.30, 0.35, 0.32, 0.40, 0.45, 0.42, 0.55, 0.50, 0.52, 0.65, 0.70, 0.67],
    [0.50, 0.54, 0.52, 0.55, 0.53, 0.54, 0.73, 0.69, 0.71, 0.85, 0.79, 0.82],
];
const PLACE: &[[f64; 12]] = &[
    [0.67, 0.74, 0.70, 0.71, 0.73, 0.72, 0.90, 0.85, 0.87, 0.95, 0.90, 0.92],
    [0.77, 0.73, 0.75, 0.62, 0.68, 0.65, 0.90, 0.88, 0.89, 0.92, 0.90, 0.91],
    [0.50, 0.55, 0.52, 0.60, 0.58, 0.59, 0.70, 0.68, 0.69, 0.80, 0.85, 0.82],
    [0.55, 0.53, 0.54, 0.70, 0.68, 0.69, 0.80, 0.72, 0.76, 0.85, 0.70, 0.77],
    [0.58, 0.62, 0.60, 0.35, 0.32, 0.34, 0.87, 0.85, 0.86, 0.90, 0.81, 0.85],
    [0.30, 0.25, 0.27, 0.35, 0.40, 0.37, 0.50, 0.45, 0.47, 0.60, 0.58, 0.59],
    [0.40, 0.45, 0.42, 0.55, 0.53, 0.54, 0.65, 0.60, 0.62, 0.75, 0.80, 0.77],
    [0.25, 0.20, 0.22, 0.35, 0.30, 0.32, 0.50, 0.45, 0.47, 0.60, 0.55, 0.57],
];
const VOICING: &[[f64; 12]] = &[
    [0.74, 0.82, 0.78, 0.85, 0.83, 0.84, 0.87, 0.82, 0.84, 0.95, 0.91, 0.93],
    [0.55, 0.50, 0.52, 0.65, 0.68, 0.66, 0.75, 0.72, 0.74, 0.85, 0.80, 0.82],
    [0.60, 0.65, 0.62, 0.70, 0.72, 0.71, 0.80, 0.78, 0.79, 0.90, 0.88, 0.89],
];
const REPORTED: [ResultTable; 3] = [
    ("manner", MANNER, [0.50, 0.51, 0.52, 0.59, 0.57, 0.58, 0.72, 0.68, 0.71, 0.82, 0.81, 0.81]),
    ("place", PLACE, [0.50, 0.54, 0.52, 0.56, 0.53, 0.54, 0.73, 0.69, 0.71, 0.80, 0.76, 0.78]),
    ("voicing", VOICING, [0.63, 0.66, 0.64, 0.73, 0.74, 0.73, 0.81, 0.77, 0.79, 0.90, 0.86, 0.88]),
];
const COLUMNS: [&str; 4] = ["univ", "unia", "fusion", "contrast"];
const METRICS: [&str; 3] = ["P", "R", "F1"];

/// Reference AVG cells that differ from the mean of their own class rows by
/// more than the tolerance. Pinned so that any change in the averaging shows up.
const INCONSISTENT_AVG_CELLS: [&str; 8] = [
    "manner univ F1",
    "manner fusion F1",
    "place univ R",
    "place univ F1",
    "place unia P",
    "place unia F1",
    "place fusion F1",
    "voicing unia F1",
];

fn criterion_5() -> Line {
    let cm = ConfusionMatrix::from_rows(&[&[8, 2], &[3, 7]]);
    let m = prf(&cm);
    let want = [
        Prf { precision: 8.0 / 11.0, recall: 0.8, f1: 16.0 / 21.0 },
        Prf { precision: 7.0 / 9.0, recall: 0.7, f1: 2.0 * (7.0 / 9.0) * 0.7 / (7.0 / 9.0 + 0.7) },
    ];
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
    let fixture = m.iter().zip(&want).all(|(a, b)| close(a.precision, b.precision) && close(a.recall, b.recall) && close(a.f1, b.f1))
        && close(macro_avg(&m).f1, (want[0].f1 + want[1].f1) / 2.0);

    let mut deviations = Vec::new();
    let mut cells = 0;
    for (name, rows, avg) in REPORTED {
        for (col, mode) in COLUMNS.iter().enumerate() {
            let per: Vec<Prf> = rows.iter().map(|r| Prf { precision: r[3 * col], recall: r[3 * col + 1], f1: r[3 * col + 2] }).collect();
            let a = macro_avg(&per);
            for (k, v) in [a.precision, a.recall, a.f1].into_iter().enumerate() {
                cells += 1;
                // Rounded table entries: allow representation error at the boundary.
                if (v - avg[3 * col + k]).abs() > AVG_TOL + 1e-9 {
                    deviations.push(format!("{name} {mode} {}", METRICS[k]));
                }
            }
        }
    }
    assert!(fixture, "confusion-matrix fixture");
    assert_eq!(deviations, INCONSISTENT_AVG_CELLS, "class-mean recomputation changed");
    let ok = cells - deviations.len();
    Line {
        id: 5,
        name: "metric oracle",
        pass: fixture && deviations.is_empty(),
        detail: format!(
            "fixture exact; {ok}/{cells} reference AVG cells within {AVG_TOL} of their class means; \
             the reference table disagrees with itself at [{}]",
            deviations.join(", ")
        ),
        external: true,
    }
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Line {
    let roster: Vec<(String, Gender)> =
        (0..10).map(|i| (format!("S{:02}", i + 1), if i % 2 == 0 { Gender::M } else { Gender::F })).collect();
    let gender = |s: &str| roster.iter().find(|(n, _)| n == s).unwrap().1;
    let plan = make_folds(&roster, 5, 7, FoldPolicy::Default).unwrap();
    let mut ok = plan.folds.len() == 5;
    let mut tested = Vec::new();
    for f in &plan.folds {
        ok &= (f.train.len(), f.val.len(), f.test.len()) == (6, 2, 2);
        let mut all: Vec<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
        all.sort();
        all.dedup();
        ok &= all.len() == 10;
        ok &= gender(&f.test[0]) != gender(&f.test[1]) && gender(&f.val[0]) != gender(&f.val[1]);
        tested.extend(f.test.iter().cloned());
    }
    tested.sort();
    tested.dedup();
    let determinism = plan == make_folds(&roster, 5, 7, FoldPolicy::Default).unwrap();
    line(
        6,
        "protocol properties",
        ok && determinism && tested.len() == 10,
        format!("5 folds, 6/2/2 disjoint, 1M+1F test and val, {} distinct test speakers, deterministic={determinism}", tested.len()),
    )
}

// ---------------------------------------------------------------- 7-9

struct Smoke {
    outcome: TrainOutcome,
    test_f1: f64,
    baseline_f1: f64,
    frames: usize,
    secs: f64,
}

fn desk_config() -> RunConfig {
    RunConfig::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")).unwrap()
}

fn smoke(manifest: &Manifest, cfg: &RunConfig, out: &Path) -> Smoke {
    let t = Instant::now();
    let map = PhonemeMap::default();
    let outcome = train_fold(manifest, cfg, &map, &TrainOptions::default()).unwrap();
    outcome.write(out).unwrap();
    let result = eval_checkpoint(&outcome.best, manifest, None, Split::Test, &map).unwrap();
    emit_report(std::slice::from_ref(&result), out, &[ReportFormat::Csv, ReportFormat::Svg]).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let data = FoldExamples::build(manifest, cfg, cfg.train.fold, false, &map).unwrap();
    let dim = cfg.model.mode.dimension;
    let base = majority_baseline(&data.split(Split::Train), &data.split(Split::Test), dim).unwrap();
    Smoke {
        test_f1: macro_avg(&result.pooled()).f1,
        baseline_f1: macro_f1(&base),
        frames: data.examples.len(),
        outcome,
        secs,
    }
}

fn criterion_7(cfg: &RunConfig, s: &Smoke, synth_secs: f64) -> Line {
    let e1 = s.outcome.history.mean_loss(1).unwrap();
    let e3 = s.outcome.history.mean_loss(3).unwrap();
    let floor = F1_FLOOR.max(BASELINE_FACTOR * s.baseline_f1);
    let total = s.secs + synth_secs;
    line(
        7,
        "end-to-end smoke",
        s.frames >= 3000 && s.test_f1 >= floor && e3 < e1 && total < SMOKE_BUDGET_S,
        format!(
            "{} {} {} epochs on {} frames: test macro-F1 {:.4} (floor {floor:.4}; majority {:.4}), epoch loss 1 {e1:.4} -> 3 {e3:.4}, best epoch {}, {total:.1}s on {} thread(s)",
            cfg.model.mode.mode,
            cfg.model.mode.dimension,
            cfg.train.epochs,
            s.frames,
            s.test_f1,
            s.baseline_f1,
            s.outcome.best_epoch,
            rayon::current_num_threads()
        ),
    )
}

fn criterion_8(a: &Path, b: &Path) -> Line {
    let files = [TrainOutcome::BEST, TrainOutcome::LAST, TrainOutcome::HISTORY, TrainOutcome::EPOCHS, "voicing.csv", "voicing.svg"];
    let differing: Vec<&str> =
        files.iter().copied().filter(|f| std::fs::read(a.join(f)).ok().is_none_or(|x| Some(x) != std::fs::read(b.join(f)).ok())).collect();
    line(8, "determinism", differing.is_empty(), format!("{} files compared byte for byte, differing {:?}", files.len(), differing))
}

fn criterion_9(manifest: &Manifest, s: &Smoke) -> Line {
    let map = PhonemeMap::default();
    let with_audio = eval_checkpoint(&s.outcome.best, manifest, None, Split::Test, &map).unwrap();
    let mut removed = 0;
    for u in &manifest.utterances {
        let p = manifest.resolve(&u.audio_path);
        if p.exists() {
            std::fs::remove_file(p).unwrap();
            removed += 1;
        }
    }
    let without = eval_checkpoint(&s.outcome.best, manifest, None, Split::Test, &map);
    let (model, _) = Model::from_checkpoint(&s.outcome.best).unwrap();
    let pass = matches!(&without, Ok(r) if *r == with_audio) && !model.mode().inference_uses_audio();
    line(
        9,
        "audio-free contrast inference",
        pass,
        format!(
            "{removed} audio files deleted; evaluation {}",
            match &without {
                Ok(r) if *r == with_audio => "succeeds with identical confusion matrix".to_string(),
                Ok(_) => "succeeds but differs".to_string(),
                Err(e) => format!("fails: {e}"),
            }
        ),
    )
}

fn main() {
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_6()];

    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let t = Instant::now();
    let manifest = synthesize_corpus(&SynthSpec { seed: 7, ..Default::default() }, &corpus).unwrap();
    let synth_secs = t.elapsed().as_secs_f64();
    let cfg = desk_config();
    assert_eq!(lookup(&cfg.model.mode.mode).unwrap().name(), "contrast");
    let (run_a, run_b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    let first = smoke(&manifest, &cfg, &run_a);
    lines.push(criterion_7(&cfg, &first, synth_secs));
    let second = smoke(&manifest, &cfg, &run_b);
    lines.push(criterion_8(&run_a, &run_b));
    drop(second);
    lines.push(criterion_9(&manifest, &first));

    println!();
    for l in &lines {
        let tag = if l.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {tag} {}: {}", l.id, l.name, l.detail);
    }
    let failed: Vec<u8> = lines.iter().filter(|l| !l.pass && !l.external).map(|l| l.id).collect();
    if !failed.is_empty() {
        eprintln!("criteria failed: {failed:?}");
        std::process::exit(1);
    }
}
