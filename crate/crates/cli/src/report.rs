//! CSV tables written by the commands.
//!
//! Floats are written with Rust's shortest round-trip formatting so that a
//! value read back parses to the identical `f64`.

use rankprobe::metrics::{LayerMeasurement, LayerMetrics};
use rankprobe::trainer::TrainRun;

pub const METRICS_HEADER: [&str; 10] = [
    "epoch",
    "layer_index",
    "layer_name",
    "mode",
    "estimated_rank",
    "noise_variance",
    "stable_rank",
    "condition",
    "quality",
    "learning_rate",
];

pub const LR_HEADER: [&str; 6] = [
    "epoch",
    "layer_index",
    "layer_name",
    "learning_rate",
    "raw_learning_rate",
    "clamped",
];

pub const HISTORY_HEADER: [&str; 6] = [
    "epoch",
    "train_loss",
    "train_accuracy",
    "test_accuracy",
    "generalization_gap",
    "network_quality",
];

pub const ANALYZE_HEADER: [&str; 7] = [
    "name",
    "dims",
    "estimated_rank",
    "noise_variance",
    "stable_rank",
    "condition",
    "quality",
];

/// Name used for the network-level row in metrics and analysis tables.
pub const NETWORK_ROW: &str = "NETWORK";

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

pub fn num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn metric_cells(m: &LayerMetrics) -> [String; 5] {
    [
        m.estimated_rank.to_string(),
        num(m.noise_variance),
        num(m.stable_rank),
        num(m.condition),
        num(m.quality),
    ]
}

/// Rows for one layer at one epoch: `dense`, or `mode3`, `mode4`, `avg`.
pub fn layer_rows(epoch: usize, name: &str, m: &LayerMeasurement, lr: f64) -> Vec<Vec<String>> {
    let row = |mode: &str, metrics: &LayerMetrics| {
        let mut r = vec![
            epoch.to_string(),
            m.summary.layer_index.to_string(),
            name.to_string(),
            mode.to_string(),
        ];
        r.extend(metric_cells(metrics));
        r.push(num(lr));
        r
    };
    let mut rows: Vec<Vec<String>> = m.per_mode.iter().map(|pm| row(pm.mode.label(), &pm.metrics)).collect();
    rows.push(row(m.summary_label(), &m.summary));
    rows
}

/// The network row: `Q` in the quality column, per-layer fields left empty.
pub fn network_row(epoch: usize, q: f64) -> Vec<String> {
    vec![
        epoch.to_string(),
        "-1".into(),
        NETWORK_ROW.into(),
        "avg".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        num(q),
        String::new(),
    ]
}

pub fn metrics_table(run: &TrainRun) -> Table {
    let mut t = Table::new(&METRICS_HEADER);
    for rec in &run.records {
        for (g, m) in rec.measurements.iter().enumerate() {
            for row in layer_rows(rec.epoch, &run.layer_names[g], m, rec.learning_rates[g]) {
                t.push(row);
            }
        }
        t.push(network_row(rec.epoch, rec.quality.network_quality));
    }
    t
}

/// Per-layer rates; epoch 0 carries the initial rate.
pub fn lr_table(run: &TrainRun) -> Table {
    let mut t = Table::new(&LR_HEADER);
    for (g, name) in run.layer_names.iter().enumerate() {
        t.push(vec![
            "0".into(),
            (g + 1).to_string(),
            name.clone(),
            num(run.eta0),
            num(run.eta0),
            "false".into(),
        ]);
    }
    for rec in &run.records {
        for (g, name) in run.layer_names.iter().enumerate() {
            t.push(vec![
                rec.epoch.to_string(),
                (g + 1).to_string(),
                name.clone(),
                num(rec.learning_rates[g]),
                num(rec.raw_learning_rates[g]),
                rec.clamped.contains(&g).to_string(),
            ]);
        }
    }
    t
}

pub fn history_table(run: &TrainRun) -> Table {
    let mut t = Table::new(&HISTORY_HEADER);
    for rec in &run.records {
        t.push(vec![
            rec.epoch.to_string(),
            num(rec.train_loss),
            num(rec.train_accuracy),
            num(rec.test_accuracy),
            num(rec.generalization_gap()),
            num(rec.quality.network_quality),
        ]);
    }
    t
}

pub fn analyze_row(name: &str, dims: &[usize], m: &LayerMetrics) -> Vec<String> {
    let dims = dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
    let mut r = vec![name.to_string(), dims];
    r.extend(metric_cells(m));
    r
}

pub fn analyze_network_row(q: f64) -> Vec<String> {
    let mut r = vec![NETWORK_ROW.to_string()];
    r.extend(std::iter::repeat_n(String::new(), 5));
    r.push(num(q));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 6.02e23, 0.0, f64::MIN_POSITIVE] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(1e-300), "1e-300");
        assert_eq!(num(0.25), "0.25");
    }

    #[test]
    fn csv_quotes_and_terminates() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "2".into()]);
        assert_eq!(String::from_utf8(t.to_csv()).unwrap(), "a,b\n\"x,y\",2\n");
    }

    #[test]
    fn network_rows_have_schema_width() {
        assert_eq!(network_row(3, 1.5).len(), METRICS_HEADER.len());
        assert_eq!(analyze_network_row(1.5).len(), ANALYZE_HEADER.len());
    }
}
