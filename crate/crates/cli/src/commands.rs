use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rankprobe::correlation::{pearson, spearman, CorrelationError};
use rankprobe::metrics::{measure_layers, network_quality, LayerMeasurement, LayerMetrics, WeightTensor};
use rankprobe::trainer::{train_with_hook, TrainRun};
use rankprobe::{Matrix, NoiseModel, Tensor4D};

use crate::archive::{Entry, TensorArchive, TensorData};
use crate::manifest::{ExperimentManifest, Overrides};
use crate::report::{self, Table};
use crate::svg::{self, Chart, Series};
use crate::{io_err, write_atomic, CliError};

pub const METRICS_CSV: &str = "metrics.csv";
pub const LR_CSV: &str = "learning_rates.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const CHECKPOINT: &str = "checkpoint.rptk";
pub const LR_SVG: &str = "learning_rates.svg";
pub const METRICS_SVG: &str = "layer_metrics.svg";
pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const RESOLVED_MANIFEST: &str = "manifest.resolved.toml";

#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub run: TrainRun,
}

pub fn cmd_train(manifest_path: &Path, out: Option<&Path>, overrides: &Overrides) -> Result<TrainOutcome, CliError> {
    let mut manifest = ExperimentManifest::load(manifest_path)?;
    manifest.apply(overrides)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| manifest.output_dir.clone())
        .ok_or_else(|| CliError::Config("field `output_dir`: missing and no --out given".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    info!(
        "experiment {}: training for {} epochs",
        manifest.id, manifest.train.epochs
    );
    let run = train_with_hook(&manifest.network, &manifest.train, |rec, _| {
        info!(
            "epoch {:>4}: loss {:.4} train {:.4} test {:.4} Q {:.4}",
            rec.epoch, rec.train_loss, rec.train_accuracy, rec.test_accuracy, rec.quality.network_quality
        );
    })?;
    if run.clamp_count > 0 {
        warn!("{} learning-rate clamps fired", run.clamp_count);
    }

    let resolved = toml::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    write_atomic(&out_dir.join(RESOLVED_MANIFEST), resolved.as_bytes())?;
    write_atomic(&out_dir.join(METRICS_CSV), &report::metrics_table(&run).to_csv())?;
    write_atomic(&out_dir.join(LR_CSV), &report::lr_table(&run).to_csv())?;
    write_atomic(&out_dir.join(HISTORY_CSV), &report::history_table(&run).to_csv())?;
    write_atomic(&out_dir.join(CHECKPOINT), &checkpoint(&run).to_bytes())?;
    write_atomic(&out_dir.join(LR_SVG), svg::render(&[lr_chart(&run)]).as_bytes())?;
    write_atomic(&out_dir.join(METRICS_SVG), svg::render(&metric_charts(&run)).as_bytes())?;
    write_atomic(
        &out_dir.join(ACCURACY_SVG),
        svg::render(&[accuracy_chart(&run)]).as_bytes(),
    )?;

    let last = run.last();
    println!(
        "{}: {} epochs, train acc {:.4}, test acc {:.4}, Q {:.4}, clamps {} -> {}",
        manifest.id,
        run.records.len(),
        last.train_accuracy,
        last.test_accuracy,
        last.quality.network_quality,
        run.clamp_count,
        out_dir.display()
    );
    Ok(TrainOutcome { out_dir, run })
}

/// Every trainable tensor of the final network, in parameter order.
pub fn checkpoint(run: &TrainRun) -> TensorArchive {
    let mut archive = TensorArchive::new();
    for p in run.network.params() {
        Entry::new(p.name.clone(), p.dims.clone(), TensorData::F64(p.data.clone()))
            .and_then(|e| archive.push(e))
            .expect("parameter names are unique and match their dims");
    }
    archive
}

fn epochs_of(run: &TrainRun) -> impl Iterator<Item = f64> + '_ {
    run.records.iter().map(|r| r.epoch as f64)
}

fn lr_chart(run: &TrainRun) -> Chart {
    let history = run.lr_history();
    Chart {
        title: "Learning rate per layer".into(),
        x_label: "epoch".into(),
        y_label: "learning rate".into(),
        series: run
            .layer_names
            .iter()
            .enumerate()
            .map(|(g, name)| Series {
                name: name.clone(),
                points: history.iter().enumerate().map(|(e, row)| (e as f64, row[g])).collect(),
            })
            .collect(),
    }
}

type MetricFn = fn(&LayerMetrics) -> f64;

fn metric_charts(run: &TrainRun) -> Vec<Chart> {
    let pick: [(&str, MetricFn); 3] = [
        ("stable rank", |m| m.stable_rank),
        ("condition", |m| m.condition),
        ("quality", |m| m.quality),
    ];
    pick.iter()
        .map(|&(label, f)| Chart {
            title: format!("{} per layer", label[..1].to_uppercase() + &label[1..]),
            x_label: "epoch".into(),
            y_label: label.into(),
            series: run
                .layer_names
                .iter()
                .enumerate()
                .map(|(g, name)| Series {
                    name: name.clone(),
                    points: epochs_of(run)
                        .zip(&run.records)
                        .map(|(e, r)| (e, f(&r.quality.per_layer[g])))
                        .collect(),
                })
                .collect(),
        })
        .collect()
}

fn accuracy_chart(run: &TrainRun) -> Chart {
    let series = |name: &str, f: fn(&rankprobe::trainer::EpochRecord) -> f64| Series {
        name: name.into(),
        points: epochs_of(run).zip(&run.records).map(|(e, r)| (e, f(r))).collect(),
    };
    Chart {
        title: "Accuracy".into(),
        x_label: "epoch".into(),
        y_label: "accuracy".into(),
        series: vec![
            series("train", |r| r.train_accuracy),
            series("test", |r| r.test_accuracy),
        ],
    }
}

/// One measured tensor of an analysed checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub metrics: LayerMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub tensors: Vec<AnalyzedTensor>,
    pub network_quality: f64,
}

impl Analysis {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&report::ANALYZE_HEADER);
        for a in &self.tensors {
            t.push(report::analyze_row(&a.name, &a.dims, &a.metrics));
        }
        t.push(report::analyze_network_row(self.network_quality));
        t
    }
}

fn as_weight(entry: &Entry) -> Option<WeightTensor> {
    let data = entry.data.to_f64();
    match entry.dims.as_slice() {
        [rows, cols] => Matrix::new(*rows, *cols, data).ok().map(WeightTensor::Dense),
        [h, w, n_in, n_out] => Tensor4D::new(*h, *w, *n_in, *n_out, data).ok().map(WeightTensor::Conv),
        _ => None,
    }
}

pub fn read_archive(path: &Path) -> Result<TensorArchive, CliError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    TensorArchive::from_bytes(&bytes).map_err(|source| CliError::Archive {
        path: path.to_owned(),
        source,
    })
}

/// Measures every matching 2-D or 4-D tensor. Tensors too small to factorize
/// are reported with rank 0 and `q = 0`, as training reports them.
pub fn analyze_archive(archive: &TensorArchive, filters: &[glob::Pattern]) -> Result<Analysis, CliError> {
    let selected: Vec<(&Entry, WeightTensor)> = archive
        .entries()
        .iter()
        .filter(|e| filters.is_empty() || filters.iter().any(|p| p.matches(&e.name)))
        .filter_map(|e| as_weight(e).map(|w| (e, w)))
        .collect();
    if selected.is_empty() {
        return Err(CliError::NothingToProbe(format!(
            "none of the {} entries is a 2-D or 4-D tensor matching the filters",
            archive.entries().len()
        )));
    }
    let weights: Vec<WeightTensor> = selected.iter().map(|(_, w)| w.clone()).collect();
    let tensors: Vec<AnalyzedTensor> = selected
        .iter()
        .zip(measure_layers(&weights, NoiseModel::Estimate))
        .enumerate()
        .map(|(i, ((entry, w), result))| {
            let m = result.unwrap_or_else(|e| {
                warn!("`{}`: {e}; reporting it as empty", entry.name);
                LayerMeasurement::empty(w, i + 1)
            });
            AnalyzedTensor {
                name: entry.name.clone(),
                dims: entry.dims.clone(),
                metrics: m.summary,
            }
        })
        .collect();
    let qualities: Vec<f64> = tensors.iter().map(|t| t.metrics.quality).collect();
    let network_quality = network_quality(&qualities).expect("at least one tensor");
    Ok(Analysis {
        tensors,
        network_quality,
    })
}

pub fn cmd_analyze(checkpoint: &Path, filters: &[String], out: &Path) -> Result<Analysis, CliError> {
    let patterns = filters
        .iter()
        .map(|f| glob::Pattern::new(f).map_err(|e| CliError::Config(format!("field `filter`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let archive = read_archive(checkpoint)?;
    let analysis = analyze_archive(&archive, &patterns)?;
    write_atomic(out, &analysis.table().to_csv())?;
    for t in &analysis.tensors {
        let m = &t.metrics;
        println!(
            "{:<24} rank {:>4}  s {:.4}  κ {:.4}  q {:.4}",
            t.name, m.estimated_rank, m.stable_rank, m.condition, m.quality
        );
    }
    println!(
        "Q = {:.6} over {} tensors -> {}",
        analysis.network_quality,
        analysis.tensors.len(),
        out.display()
    );
    Ok(analysis)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCorrelation {
    pub group: String,
    pub n: usize,
    pub plcc_test_acc: f64,
    pub rocc_test_acc: f64,
    pub plcc_gen_gap: f64,
    pub rocc_gen_gap: f64,
}

#[derive(Default)]
struct Columns {
    q: Vec<f64>,
    acc: Vec<f64>,
    gap: Vec<f64>,
}

pub fn correlate_table(text: &str) -> Result<Vec<GroupCorrelation>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CliError::Table(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Table(format!("missing column `{name}`")))
    };
    let (gi, qi, ai, ki) = (col("group")?, col("q_metric")?, col("test_acc")?, col("gen_gap")?);

    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Columns> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Table(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64, CliError> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Table(format!("line {line}: `{name}` value `{raw}` is not a finite number")))
        };
        let group = record.get(gi).unwrap_or("").to_string();
        if group.is_empty() {
            return Err(CliError::Table(format!("line {line}: empty group")));
        }
        let (q, acc, gap) = (field(qi, "q_metric")?, field(ai, "test_acc")?, field(ki, "gen_gap")?);
        let cols = groups.entry(group.clone()).or_insert_with(|| {
            order.push(group.clone());
            Columns::default()
        });
        cols.q.push(q);
        cols.acc.push(acc);
        cols.gap.push(gap);
    }
    if order.is_empty() {
        return Err(CliError::Table("no data rows".into()));
    }
    order
        .into_iter()
        .map(|group| {
            let c = &groups[&group];
            if c.q.len() < 3 {
                return Err(CliError::Table(format!(
                    "group `{group}` has {} rows, need at least 3",
                    c.q.len()
                )));
            }
            let wrap = |what: &str, r: Result<f64, CorrelationError>| {
                r.map(|v| 100.0 * v)
                    .map_err(|e| CliError::Table(format!("group `{group}`, {what}: {e}")))
            };
            Ok(GroupCorrelation {
                n: c.q.len(),
                plcc_test_acc: wrap("q_metric vs test_acc", pearson(&c.q, &c.acc))?,
                rocc_test_acc: wrap("q_metric vs test_acc", spearman(&c.q, &c.acc))?,
                plcc_gen_gap: wrap("q_metric vs gen_gap", pearson(&c.q, &c.gap))?,
                rocc_gen_gap: wrap("q_metric vs gen_gap", spearman(&c.q, &c.gap))?,
                group,
            })
        })
        .collect()
}

pub fn format_correlations(rows: &[GroupCorrelation]) -> String {
    let width = rows.iter().map(|r| r.group.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>4}  {:>16}  {:>16}  {:>15}  {:>15}\n",
        "group", "n", "Test Acc PLCC(%)", "Test Acc ROCC(%)", "Gen Gap PLCC(%)", "Gen Gap ROCC(%)"
    );
    for r in rows {
        out += &format!(
            "{:<width$}  {:>4}  {:>16.2}  {:>16.2}  {:>15.2}  {:>15.2}\n",
            r.group, r.n, r.plcc_test_acc, r.rocc_test_acc, r.plcc_gen_gap, r.rocc_gen_gap
        );
    }
    out
}

pub fn cmd_correlate(table: &Path) -> Result<Vec<GroupCorrelation>, CliError> {
    let text = std::fs::read_to_string(table).map_err(io_err(table))?;
    let rows = correlate_table(&text)?;
    print!("{}", format_correlations(&rows));
    Ok(rows)
}
