//! Generation quality: the filter-pass rate of decoded random latent
//! samples, the corresponding rate on real data, genre centroids on the map,
//! and a seeded synthetic corpus for runs without the original MIDI files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::PatternRecord;
use crate::latent::{binarize, train, AutoencoderModel, LatentError, LatentPoint, ModelKind, TrainConfig};
use crate::pattern::{decode_codes, encode_pattern, pattern_entropy, DrumPattern, INSTRUMENTS, STEPS};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Anything that can draw latent points and decode them to probabilities.
pub trait PatternSource: Sync {
    fn label(&self) -> String;
    fn sample_latents(&self, n: usize, seed: u64) -> Result<Vec<LatentPoint>, LatentError>;
    fn decode(&self, z: &LatentPoint) -> Vec<f64>;
}

impl PatternSource for AutoencoderModel {
    fn label(&self) -> String {
        self.kind.name().to_string()
    }

    fn sample_latents(&self, n: usize, seed: u64) -> Result<Vec<LatentPoint>, LatentError> {
        AutoencoderModel::sample_latents(self, n, seed)
    }

    fn decode(&self, z: &LatentPoint) -> Vec<f64> {
        AutoencoderModel::decode(self, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub n: usize,
    pub passes: usize,
    pub failed_empty: usize,
    pub failed_entropy: usize,
    pub entropy_threshold: f64,
    pub seed: u64,
}

impl EvalReport {
    pub fn pass_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.passes as f64 / self.n as f64
        }
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "model={}\nn={}\nk={}\nseed={}\npasses={}\npass_rate={:.6}\nfailed_empty={}\nfailed_entropy={}\n",
            self.model,
            self.n,
            self.entropy_threshold,
            self.seed,
            self.passes,
            self.pass_rate(),
            self.failed_empty,
            self.failed_entropy
        )
    }
}

/// Fixed-width table, one row per report.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = format!("{:<10} {:>8} {:>9} {:>8} {:>9}\n", "model", "n", "pass_rate", "empty", "entropy");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8.2}% {:>8} {:>9}",
            r.model,
            r.n,
            100.0 * r.pass_rate(),
            r.failed_empty,
            r.failed_entropy
        );
    }
    out
}

/// Outcome of the generation filter for one pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    Pass,
    Empty,
    LowEntropy,
}

/// The pattern must be nonzero and its step-code entropy must exceed `k`.
pub fn classify(pattern: &DrumPattern, k: f64) -> FilterOutcome {
    if pattern.is_empty() {
        FilterOutcome::Empty
    } else if pattern_entropy(&encode_pattern(pattern)) > k {
        FilterOutcome::Pass
    } else {
        FilterOutcome::LowEntropy
    }
}

/// Tallies [`classify`] over already-generated patterns.
pub fn evaluate_patterns(label: &str, patterns: &[DrumPattern], k: f64, seed: u64) -> EvalReport {
    let mut report = EvalReport {
        model: label.to_string(),
        n: patterns.len(),
        passes: 0,
        failed_empty: 0,
        failed_entropy: 0,
        entropy_threshold: k,
        seed,
    };
    for p in patterns {
        match classify(p, k) {
            FilterOutcome::Pass => report.passes += 1,
            FilterOutcome::Empty => report.failed_empty += 1,
            FilterOutcome::LowEntropy => report.failed_entropy += 1,
        }
    }
    report
}

/// Decodes `n` latent samples at threshold 0.5, in sample order.
pub fn generate_patterns<S: PatternSource + ?Sized>(model: &S, n: usize, seed: u64) -> Result<Vec<DrumPattern>, LatentError> {
    let latents = model.sample_latents(n, seed)?;
    Ok(latents.par_iter().map(|z| binarize(&model.decode(z), DEFAULT_THRESHOLD)).collect())
}

/// Samples `n` latent points, decodes and binarizes them, and reports how
/// many survive the generation filter.
pub fn filter_pass_rate<S: PatternSource + ?Sized>(model: &S, n: usize, k: f64, seed: u64) -> Result<EvalReport, LatentError> {
    let patterns = generate_patterns(model, n, seed)?;
    Ok(evaluate_patterns(&model.label(), &patterns, k, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baseline {
    pub rate: f64,
    pub n: usize,
    /// Set when there were no records and the rate was defined as 0.
    pub empty_input: bool,
}

/// Fraction of real patterns whose entropy exceeds `k`.
pub fn baseline_pass_rate(records: &[PatternRecord], k: f64) -> Baseline {
    if records.is_empty() {
        log::warn!("baseline over an empty record list is defined as 0");
        return Baseline { rate: 0.0, n: 0, empty_input: true };
    }
    let passes = records.iter().filter(|r| pattern_entropy(&r.codes) > k).count();
    Baseline { rate: passes as f64 / records.len() as f64, n: records.len(), empty_input: false }
}

/// Mean map position per genre over records that have both.
pub fn genre_centroids(records: &[PatternRecord]) -> BTreeMap<String, [f64; 2]> {
    let mut sums: BTreeMap<&str, ([f64; 2], usize)> = BTreeMap::new();
    for r in records {
        if let (Some(g), Some(p)) = (&r.genre, &r.projection) {
            let e = sums.entry(g.as_str()).or_insert(([0.0; 2], 0));
            e.0[0] += p[0];
            e.0[1] += p[1];
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(g, (s, n))| (g.to_string(), [s[0] / n as f64, s[1] / n as f64])).collect()
}

// ---------------------------------------------------------------------------
// Desk-scale comparison

pub const DESK_SEEDS: [u64; 3] = [1, 2, 3];
pub const DESK_CORPUS_SIZE: usize = 2000;
pub const DESK_SAMPLES: usize = 10_000;
pub const DESK_EPOCHS: usize = 30;

/// Committed training settings for the desk-scale model comparison.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: DESK_EPOCHS, seed, ..TrainConfig::default() }
}

/// Trains every model kind on the synthetic corpus for `seed` and reports
/// their filter-pass rates at k = 1.
pub fn desk_comparison(seed: u64) -> Result<Vec<EvalReport>, LatentError> {
    let corpus = make_synthetic_corpus(seed, DESK_CORPUS_SIZE);
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let model = train(&corpus, kind, &desk_train_config(seed))?;
            filter_pass_rate(&model, DESK_SAMPLES, crate::config::DEFAULT_ENTROPY_THRESHOLD, seed)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic corpus

pub const SYNTHETIC_FLIP_PROBABILITY: f64 = 0.05;
pub const SYNTHETIC_PART_DROP_PROBABILITY: f64 = 0.5;

/// One choice for a part of a groove: lines of `(instrument class, grid)`.
/// Grids have 32 steps; `x` is a hit and `|` is ignored.
type PartOption = &'static [(usize, &'static str)];

/// A genre's grooves: one option is drawn from every part.
struct Style {
    genre: &'static str,
    parts: &'static [&'static [PartOption]],
}

const NONE: PartOption = &[];

const STYLES: &[Style] = &[
    Style {
        genre: "rock",
        parts: &[
            &[
                &[(0, "x.......x.x.....|x.......x.x.....")],
                &[(0, "x.......x.......|x.......x.......")],
                &[(0, "x.....x.x.......|x.....x.x.......")],
            ],
            &[
                &[(1, "....x.......x...|....x.......x...")],
                &[(1, "....x.......x...|....x.......x.xx")],
            ],
            &[
                &[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")],
                &[(9, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")],
                &[(6, "x...x...x...x...|x...x...x...x...")],
            ],
            &[NONE, &[(8, "x...............|................")], &[(5, "................|........xx..xx.."), (4, "................|............xx..")]],
        ],
    },
    Style {
        genre: "metal",
        parts: &[
            &[
                &[(0, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")],
                &[(0, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")],
                &[(0, "x.xxx.xxx.xxx.xx|x.xxx.xxx.xxx.xx")],
            ],
            &[&[(1, "....x.......x...|....x.......x...")], &[(1, "..x...x...x...x.|..x...x...x...x.")]],
            &[&[(9, "x...x...x...x...|x...x...x...x...")], &[(8, "x...x...x...x...|x...x...x...x...")], &[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[NONE, &[(4, "................|............xxxx")]],
        ],
    },
    Style {
        genre: "punk",
        parts: &[
            &[&[(0, "x...x...x...x...|x...x...x...x...")], &[(0, "x.....x.x.......|x.....x.x.......")]],
            &[&[(1, "..x...x...x...x.|..x...x...x...x.")], &[(1, "....x.......x...|....x.......x...")]],
            &[&[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(8, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(7, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[NONE, &[(8, "x...............|x...............")]],
        ],
    },
    Style {
        genre: "hip-hop",
        parts: &[
            &[
                &[(0, "x......x..x.....|x......x..x.....")],
                &[(0, "x.........x.....|x.x.......x.....")],
                &[(0, "x..x......x..x..|x..x.......x....")],
            ],
            &[&[(1, "....x.......x...|....x.......x...")], &[(3, "....x.......x...|....x.......x...")], &[(2, "....x.......x...|....x.......x..x")]],
            &[
                &[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")],
                &[(6, "x.x.x.x.x.x.x.xx|x.x.x.x.x.x.x.xx")],
                &[(6, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")],
            ],
            &[NONE, &[(7, "..............x.|..............x.")], &[(10, "x...x...x...x...|x...x...x...x...")]],
        ],
    },
    Style {
        genre: "soul",
        parts: &[
            &[&[(0, "x.....x...x.....|x.....x...x.....")], &[(0, "x.......x.......|x......x..x.....")]],
            &[&[(1, "....x.......x...|....x.......x...")], &[(3, "....x.......x...|....x.......x...")], &[(2, "....x.......x...|....x.......x...")]],
            &[&[(9, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(10, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(6, "x.xxx.xxx.xxx.xx|x.xxx.xxx.xxx.xx")]],
            &[NONE, &[(12, "..x...x...x..x..|..x...x...x..x..")]],
        ],
    },
    Style {
        genre: "funk",
        parts: &[
            &[&[(0, "x.........x..x..|x.........x..x..")], &[(0, "x..x......x.....|x.x....x..x.....")], &[(0, "x.....x...x.....|..x...x...x.....")]],
            &[&[(1, "....x..x.x..x...|....x..x.x..x...")], &[(1, "....x.......x..x|.x..x..x....x...")]],
            &[&[(6, "xxxxxxxxxxxxxx.x|xxxxxxxxxxxxxx.x"), (7, "..............x.|..............x.")], &[(6, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")], &[(10, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[NONE, &[(12, "x..x..x...x.x...|x..x..x...x.x...")], &[(11, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")]],
        ],
    },
    Style {
        genre: "jazz",
        parts: &[
            &[&[(9, "x...x..xx...x..x|x...x..xx...x..x")], &[(9, "x..xx..xx..xx..x|x..xx..xx..xx..x")]],
            &[&[(6, "....x.......x...|....x.......x...")], &[(6, "....x.......x...|....x...x...x...")]],
            &[&[(0, "x..............x|................")], &[(0, "x...............|x...............")], NONE],
            &[&[(2, "..........x.....|..............x.")], &[(1, ".......x........|..x.........x...")], NONE],
        ],
    },
    Style {
        genre: "blues",
        parts: &[
            &[&[(0, "x.....x.x.....x.|x.....x.x.....x.")], &[(0, "x.......x.......|x.......x.......")]],
            &[&[(1, "....x.......x...|....x.......x...")], &[(1, "....x..x....x...|....x..x....x..x")]],
            &[&[(6, "x..xx..xx..xx..x|x..xx..xx..xx..x")], &[(9, "x..xx..xx..xx..x|x..xx..xx..xx..x")], &[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[NONE, &[(8, "x...............|................")]],
        ],
    },
    Style {
        genre: "afro",
        parts: &[
            &[&[(0, "x.....x.........|x.....x.........")], &[(0, "x......x..x.....|x......x..x.....")]],
            &[&[(12, "x..x..x...x.x...|x..x..x...x.x...")], &[(12, "..xx....x.x...xx|..xx....x.x...xx"), (4, "x.......x.......|x.......x.......")]],
            &[&[(10, "x.x.xx.x.x.xx.x.|x.x.xx.x.x.xx.x.")], &[(10, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[&[(11, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")], &[(11, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], NONE],
        ],
    },
    Style {
        genre: "pop",
        parts: &[
            &[&[(0, "x.......x.......|x.......x.......")], &[(0, "x.......x.x.....|x.......x.x.....")], &[(0, "x.....x...x.....|x.....x...x.....")]],
            &[&[(3, "....x.......x...|....x.......x...")], &[(1, "....x.......x...|....x.......x...")]],
            &[&[(6, "..x...x...x...x.|..x...x...x...x.")], &[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(10, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")]],
            &[NONE, &[(11, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(8, "x...............|................")]],
        ],
    },
    Style {
        genre: "dance",
        parts: &[
            &[&[(0, "x...x...x...x...|x...x...x...x...")]],
            &[&[(3, "....x.......x...|....x.......x...")], &[(1, "....x.......x...|....x.......x...")], NONE],
            &[&[(7, "..x...x...x...x.|..x...x...x...x.")], &[(6, "..x...x...x...x.|..x...x...x...x.")], &[(6, "x.xxx.xxx.xxx.xx|x.xxx.xxx.xxx.xx")]],
            &[NONE, &[(6, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")], &[(8, "x...............|................")], &[(10, "..x...x...x...x.|..x...x...x...x.")]],
        ],
    },
    Style {
        genre: "electro",
        parts: &[
            &[&[(0, "x..x..x...x..x..|x..x..x...x.....")], &[(0, "x.....x.........|x.....x...x.....")]],
            &[&[(3, "....x.......x...|....x.......x...")], &[(1, "....x.......x...|....x.......x.x.")]],
            &[&[(6, "x.x.x.x.x.x.x.x.|x.x.x.x.x.x.x.x.")], &[(6, "xxxxxxxxxxxxxxxx|xxxxxxxxxxxxxxxx")]],
            &[NONE, &[(5, "..............xx|..............x."), (13, "x.......x.......|x.......x.......")], &[(10, "..x...x...x...x.|..x...x...x...x.")]],
        ],
    },
];

pub fn synthetic_genres() -> Vec<&'static str> {
    STYLES.iter().map(|s| s.genre).collect()
}

fn apply_lines(p: &mut DrumPattern, lines: PartOption) {
    for &(instrument, grid) in lines {
        for (step, c) in grid.bytes().filter(|&c| c != b'|').enumerate() {
            if c == b'x' {
                p.set(instrument, step, true);
            }
        }
    }
}

/// Genre-labelled patterns. Each record picks a genre in turn, builds a
/// groove from one random option per part of that genre's style, then with
/// probability 0.05 per step flips one random instrument bit of that step.
/// Draws whose entropy does not exceed 1.0 bit are rejected and redrawn.
pub fn make_synthetic_corpus(seed: u64, size: usize) -> Vec<PatternRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| {
            let style = &STYLES[i % STYLES.len()];
            loop {
                let mut p = DrumPattern::empty();
                for options in style.parts {
                    let choice = options[rng.random_range(0..options.len())];
                    if !rng.random_bool(SYNTHETIC_PART_DROP_PROBABILITY) {
                        apply_lines(&mut p, choice);
                    }
                }
                for step in 0..STEPS {
                    if rng.random_bool(SYNTHETIC_FLIP_PROBABILITY) {
                        let inst = rng.random_range(0..INSTRUMENTS);
                        p.set(inst, step, !p.get(inst, step));
                    }
                }
                let codes = encode_pattern(&p);
                if pattern_entropy(&codes) > 1.0 {
                    return PatternRecord { genre: Some(style.genre.to_string()), ..PatternRecord::new(codes) };
                }
            }
        })
        .collect()
}

/// Decodes every record's codes; records that fail are skipped.
pub fn record_patterns(records: &[PatternRecord]) -> Vec<DrumPattern> {
    records.iter().filter_map(|r| decode_codes(&r.codes).ok()).collect()
}
