//! The `koos` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 internal
//! error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::atlas::load_atlas;
use crate::dataset::{read_dataset, read_grades, write_dataset, write_grades, CaseRecord};
use crate::features::{extract_case, FeatureError};
use crate::forest::{load_model_file, save_model_file, train, ForestError, ForestParams};
use crate::grade::Grade;
use crate::metrics::{evaluate_with, Averaging};
use crate::nifti::{read_volume_with_header, write_volume_file};
use crate::phantom::{generate_dataset, PHANTOM_ATLAS_TEXT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "KOOS_THREADS";

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn data(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn at(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "koos", version, about = "Koos grading from brain-structure label volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a label volume's header fields and label histogram.
    Inspect { path: PathBuf },
    /// Compute the feature table for every .nii/.nii.gz volume in a directory.
    Extract {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// case_id,grade table joined into the output.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train a random forest on a labelled feature table.
    Train(TrainArgs),
    /// Predict grades for a feature table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted grades against the truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Average over all four grades and fail if one is absent.
        #[arg(long)]
        strict: bool,
    },
    /// Write a synthetic graded dataset: volumes, labels.csv and atlas.txt.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..=2500))]
        per_grade: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model path; a `.gz` suffix writes gzip-compressed JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_leaf: usize,
    #[arg(long, default_value_t = 3)]
    mtry: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grow every tree on the full table instead of a bootstrap sample.
    #[arg(long)]
    no_bootstrap: bool,
}

/// Runs the CLI with `args` (including the program name) and returns the
/// process exit code. Panics are reported as internal errors.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    if let Err(f) = configure_threads() {
        let _ = writeln!(err, "koos: {}", f.message());
        return f.code();
    }
    let result = panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli.command, out, err)));
    match result {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(f)) => {
            let _ = writeln!(err, "koos: {}", f.message());
            f.code()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| payload.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            let _ = writeln!(err, "koos: internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}

fn configure_threads() -> CmdResult {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // The global pool can only be set once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    match cmd {
        Command::Inspect { path } => inspect(&path, out),
        Command::Extract { masks, atlas, out: dest, labels } => extract(&masks, &atlas, &dest, labels.as_deref(), err),
        Command::Train(args) => train_cmd(&args, out),
        Command::Predict { model, data: path, out: dest } => predict(&model, &path, &dest),
        Command::Evaluate { pred, truth, json, strict } => evaluate_cmd(&pred, &truth, json.as_deref(), strict, out),
        Command::Phantom { out: dir, per_grade, seed } => phantom(&dir, per_grade as usize, seed, out),
    }
}

fn inspect(path: &Path, out: &mut dyn Write) -> CmdResult {
    let file = File::open(path).map_err(at(path))?;
    let (h, vol) =
        read_volume_with_header(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut s = String::new();
    s += &format!("file      {}\n", path.display());
    s += &format!("dims      {} x {} x {}\n", h.dims[0], h.dims[1], h.dims[2]);
    s += &format!("spacing   {} x {} x {} mm\n", h.pixdim[0], h.pixdim[1], h.pixdim[2]);
    s += &format!("datatype  {} ({})\n", h.datatype.name(), h.datatype.code());
    s += &format!("byteorder {:?}\n", h.byte_order);
    s += &format!("scaling   slope {} inter {}\n", h.scl_slope, h.scl_inter);
    s += &format!("codes     qform {} sform {}\n", h.qform_code, h.sform_code);
    s += "affine\n";
    for row in h.affine {
        s += &format!("  {:>12.6} {:>12.6} {:>12.6} {:>12.6}\n", row[0], row[1], row[2], row[3]);
    }
    s += "label     voxels\n";
    for (label, count) in vol.histogram() {
        s += &format!("{label:<9} {count}\n");
    }
    out.write_all(s.as_bytes()).map_err(data)
}

/// Case id of a volume file name, if it is one.
fn case_id_of(name: &str) -> Option<&str> {
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")).filter(|s| !s.is_empty())
}

fn extract(masks: &Path, atlas_path: &Path, dest: &Path, labels: Option<&Path>, err: &mut dyn Write) -> CmdResult {
    let atlas_text = std::fs::read_to_string(atlas_path).map_err(at(atlas_path))?;
    let atlas = load_atlas(&atlas_text).map_err(|e| data(format!("{}: {e}", atlas_path.display())))?;
    let grades = match labels {
        Some(p) => read_grades(File::open(p).map_err(at(p))?).map_err(|e| data(format!("{}: {e}", p.display())))?,
        None => BTreeMap::new(),
    };

    let mut cases: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(masks).map_err(at(masks))? {
        let entry = entry.map_err(at(masks))?;
        let name = entry.file_name();
        let Some(id) = name.to_str().and_then(case_id_of) else { continue };
        if let Some(prev) = cases.insert(id.to_string(), entry.path()) {
            return Err(data(format!(
                "two volumes for case {id:?}: {} and {}",
                prev.display(),
                entry.path().display()
            )));
        }
    }
    if cases.is_empty() {
        return Err(data(format!("no .nii or .nii.gz files in {}", masks.display())));
    }

    let results: Vec<(String, Result<_, Failure>)> = cases
        .into_par_iter()
        .map(|(id, path)| {
            let r = crate::nifti::read_volume_file(&path)
                .map_err(|e| data(format!("{}: {e}", path.display())))
                .map(|vol| extract_case(&vol, &atlas));
            (id, r)
        })
        .collect();

    let mut records = Vec::new();
    let mut skipped = 0;
    for (id, r) in results {
        match r? {
            Ok(features) => {
                let grade = grades.get(&id).copied().flatten();
                records.push(CaseRecord { case_id: id, features, grade });
            }
            Err(FeatureError::MissingVS) => {
                skipped += 1;
                let _ = writeln!(err, "koos: warning: {id}: no VS voxels, skipped");
            }
            Err(e) => return Err(data(format!("{id}: {e}"))),
        }
    }
    for id in grades.keys() {
        if !records.iter().any(|r| &r.case_id == id) {
            let _ = writeln!(err, "koos: warning: label for {id} matches no extracted case");
        }
    }
    if records.is_empty() {
        return Err(data(format!("all {skipped} cases were skipped")));
    }
    write_csv(dest, |w| write_dataset(&records, w))?;
    let _ = writeln!(err, "koos: extracted {} cases, skipped {skipped}", records.len());
    Ok(())
}

fn write_csv<E: std::fmt::Display>(dest: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>) -> CmdResult {
    let mut w = BufWriter::new(File::create(dest).map_err(at(dest))?);
    f(&mut w).map_err(|e| data(format!("{}: {e}", dest.display())))?;
    w.flush().map_err(at(dest))
}

fn read_table(path: &Path) -> Result<Vec<CaseRecord>, Failure> {
    let file = File::open(path).map_err(at(path))?;
    read_dataset(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let params = ForestParams {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_samples_leaf: a.min_leaf,
        mtry: a.mtry,
        seed: a.seed,
        bootstrap: !a.no_bootstrap,
    };
    params.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let records = read_table(&a.data)?;
    let model = train(&records, &params).map_err(|e| match e {
        ForestError::InvalidParams(m) => Failure::Usage(m),
        e => data(e),
    })?;
    save_model_file(&model, &a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;

    let pairs: Vec<(u8, u8)> = records
        .iter()
        .map(|r| (model.predict(&r.features).get(), r.grade.expect("train checked labels").get()))
        .collect();
    let report = evaluate_with(&pairs, Averaging::Present).map_err(data)?;
    let text =
        format!("trained {} trees on {} cases\ntraining set:\n{}", params.n_trees, records.len(), report.to_text());
    out.write_all(text.as_bytes()).map_err(data)
}

fn predict(model_path: &Path, data_path: &Path, dest: &Path) -> CmdResult {
    let model = load_model_file(model_path).map_err(|e| data(format!("{}: {e}", model_path.display())))?;
    let records = read_table(data_path)?;
    let features: Vec<_> = records.iter().map(|r| r.features).collect();
    let grades: BTreeMap<String, Grade> =
        records.iter().map(|r| r.case_id.clone()).zip(model.predict_many(&features)).collect();
    write_csv(dest, |w| write_grades(&grades, w))
}

fn evaluate_cmd(pred: &Path, truth: &Path, json: Option<&Path>, strict: bool, out: &mut dyn Write) -> CmdResult {
    let read = |p: &Path| -> Result<BTreeMap<String, Option<Grade>>, Failure> {
        read_grades(File::open(p).map_err(at(p))?).map_err(|e| data(format!("{}: {e}", p.display())))
    };
    let predicted = read(pred)?;
    let actual = read(truth)?;
    if let Some(id) = predicted.keys().find(|k| !actual.contains_key(*k)) {
        return Err(data(format!("case {id} is predicted but has no truth")));
    }
    if let Some(id) = actual.keys().find(|k| !predicted.contains_key(*k)) {
        return Err(data(format!("case {id} has truth but no prediction")));
    }
    let mut pairs = Vec::with_capacity(actual.len());
    for (id, t) in &actual {
        let t = t.ok_or_else(|| data(format!("case {id} has no true grade")))?;
        let p = predicted[id].ok_or_else(|| data(format!("case {id} has no predicted grade")))?;
        pairs.push((p.get(), t.get()));
    }
    let averaging = if strict { Averaging::Strict } else { Averaging::Present };
    let report = evaluate_with(&pairs, averaging).map_err(data)?;
    if let Some(path) = json {
        std::fs::write(path, report.to_json()).map_err(at(path))?;
    }
    out.write_all(report.to_text().as_bytes()).map_err(data)
}

fn phantom(dir: &Path, per_grade: usize, seed: u64, out: &mut dyn Write) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(at(dir))?;
    let cases = generate_dataset(per_grade, seed).map_err(data)?;
    cases.par_iter().try_for_each(|(vol, rec)| {
        let path = dir.join(format!("{}.nii.gz", rec.case_id));
        write_volume_file(&path, vol).map_err(|e| data(format!("{}: {e}", path.display())))
    })?;
    let grades: BTreeMap<String, Grade> =
        cases.iter().map(|(_, r)| (r.case_id.clone(), r.grade.expect("phantoms are graded"))).collect();
    write_csv(&dir.join("labels.csv"), |w| write_grades(&grades, w))?;
    let atlas = dir.join("atlas.txt");
    std::fs::write(&atlas, PHANTOM_ATLAS_TEXT).map_err(at(&atlas))?;
    writeln!(out, "wrote {} phantoms to {}", cases.len(), dir.display()).map_err(data)
}
