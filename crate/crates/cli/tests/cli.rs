use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drumspace::dataset::read_dataset;
use drumspace::latent::AutoencoderModel;

fn drumspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drumspace")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn extract_reads_the_fixture_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("patterns.tsv");
    let run = drumspace(&["extract", p(&fixtures()), p(&out)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = stdout(&run);
    assert!(text.contains("files=4\n"), "{text}");
    assert!(text.contains("records=1\n"), "{text}");
    let records = read_dataset(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].genre.as_deref(), Some("rock"));
}

#[test]
fn training_is_reproducible_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.tsv");
    assert!(drumspace(&["synth-corpus", p(&data), "--n", "120", "--seed", "4"]).status.success());
    let mut checkpoints = Vec::new();
    for name in ["a.ckpt", "b.ckpt"] {
        let ckpt = dir.path().join(name);
        let run = drumspace(&["--seed", "9", "train", "--kind", "acai", p(&data), p(&ckpt), "--epochs", "2"]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        assert!(stdout(&run).contains("model=acai\n"));
        checkpoints.push(std::fs::read(&ckpt).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
    assert_eq!(AutoencoderModel::load(&checkpoints[0]).unwrap().kind.name(), "acai");
}

#[test]
fn eval_of_a_silent_model_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.tsv");
    let ckpt = dir.path().join("ae.ckpt");
    assert!(drumspace(&["synth-corpus", p(&data), "--n", "50"]).status.success());
    assert!(drumspace(&["train", "--kind", "ae", p(&data), p(&ckpt), "--epochs", "1"]).status.success());
    let mut model = AutoencoderModel::load(&std::fs::read(&ckpt).unwrap()).unwrap();
    model.decoder.layers_mut().last_mut().unwrap().bias.fill(-1e3);
    std::fs::write(&ckpt, model.save()).unwrap();
    let run = drumspace(&["eval", p(&ckpt), "--n", "200"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = stdout(&run);
    let row = table.lines().find(|l| l.starts_with("ae")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[1..4], ["200", "0.00%", "200"], "{table}");
}

#[test]
fn project_fills_the_map_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.tsv");
    let ckpt = dir.path().join("ae.ckpt");
    assert!(drumspace(&["synth-corpus", p(&data), "--n", "40"]).status.success());
    assert!(drumspace(&["train", "--kind", "ae", p(&data), p(&ckpt), "--epochs", "1"]).status.success());
    let run = drumspace(&["project", p(&data), p(&ckpt), "--perplexity", "5", "--iterations", "250"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).lines().any(|l| l.starts_with("centroid\t")));
    let records = read_dataset(&std::fs::read(&data).unwrap()).unwrap();
    assert_eq!(records.len(), 40);
    assert!(records.iter().all(|r| r.latent.is_some() && r.projection.is_some()));
}

#[test]
fn melody_generation_writes_midi() {
    use drumspace::melody::MelodyGenerator;
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen.ckpt");
    let out = dir.path().join("song.mid");
    std::fs::write(&gen, MelodyGenerator::new(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).save()).unwrap();
    let codes = ["1", "0", "64", "0", "2", "0", "64", "0"].repeat(4).join(",");
    let run = drumspace(&[
        "melody-gen", p(&gen), p(&out), "--codes", &codes, "--instrument", "33", "--key", "Am", "--octave", "4",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("filter="));
    drumspace::midi::parse_midi(&std::fs::read(&out).unwrap()).unwrap();

    let key = drumspace(&["detect-key", p(&fixtures().join("rock_groove_x4.mid"))]);
    assert_eq!(key.status.code(), Some(2), "a drums-only file has no key");
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(drumspace(&[]).status.code(), Some(1));
    assert_eq!(drumspace(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(drumspace(&["train", "--kind", "gan", "x", "y"]).status.code(), Some(1));
    assert_eq!(drumspace(&["--help"]).status.code(), Some(0));
    assert_eq!(drumspace(&["eval", "missing.ckpt"]).status.code(), Some(2));
    let garbage = dir.path().join("garbage.tsv");
    std::fs::write(&garbage, "not a dataset\n").unwrap();
    let out = dir.path().join("m.ckpt");
    assert_eq!(drumspace(&["train", "--kind", "ae", p(&garbage), p(&out)]).status.code(), Some(2));
    assert_eq!(drumspace(&["extract", p(&dir.path().join("nowhere")), p(&out)]).status.code(), Some(2));
    assert_eq!(drumspace(&["melody-gen", "g", "o", "--codes", "1,2,3"]).status.code(), Some(1));
}
