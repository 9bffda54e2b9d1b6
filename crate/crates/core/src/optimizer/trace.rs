use std::io::{self, Write};
use std::sync::Arc;

use crate::eigenspace::LatentCoords;
use crate::image::ImageTensor;
use crate::oracle::{cosine, SyntheticEmbedder};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Short ascent from a fresh start.
    Restart,
    /// The single scoring query that closes a restart.
    Select,
    /// Long ascent from the selected restart.
    Main,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Restart => "restart",
            Phase::Select => "select",
            Phase::Main => "main",
        }
    }
}

/// One logged step.
///
/// For `Restart`/`Main` rows, `iteration` counts completed updates in the
/// current phase (1-based) and `score` is `(s_minus + s_plus) / 2` from the
/// pair that produced the update. For `Select` rows, `score` is the restart's
/// closing evaluation. `queries_used` counts queries consumed by this run so
/// far, including the row's own.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub phase: Phase,
    pub restart: Option<usize>,
    pub iteration: u64,
    pub queries_used: u64,
    pub score: f64,
    /// Monitor readings taken on the coordinates after this step.
    pub monitors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub monitor_names: Vec<String>,
    /// Closing score of each completed restart, in restart order.
    pub restart_scores: Vec<f64>,
    pub selected_restart: Option<usize>,
    pub queries_used: u64,
    pub final_coords: LatentCoords,
}

impl RunTrace {
    pub(crate) fn empty(k: usize, monitor_names: Vec<String>) -> Self {
        Self {
            records: Vec::new(),
            monitor_names,
            restart_scores: Vec::new(),
            selected_restart: None,
            queries_used: 0,
            final_coords: LatentCoords::zeros(k),
        }
    }

    /// Rows of one phase.
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// Values of monitor `name` over the rows of `phase`.
    pub fn monitor_series(&self, name: &str, phase: Phase) -> Option<Vec<f64>> {
        let col = self.monitor_names.iter().position(|n| n == name)?;
        Some(self.phase(phase).map(|r| r.monitors[col]).collect())
    }

    /// CSV with header `phase,restart,iteration,queries_used,score` followed by
    /// one column per monitor.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "phase".to_string(),
            "restart".into(),
            "iteration".into(),
            "queries_used".into(),
            "score".into(),
        ];
        header.extend(self.monitor_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.phase.as_str().to_string(),
                r.restart.map(|x| x.to_string()).unwrap_or_default(),
                r.iteration.to_string(),
                r.queries_used.to_string(),
                r.score.to_string(),
            ];
            row.extend(r.monitors.iter().map(|m| m.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Out-of-band measurement taken at every logged step. Monitors never touch
/// the oracle ledger.
pub trait TraceMonitor: Send + Sync {
    fn name(&self) -> &str;
    fn measure(&self, image: &ImageTensor) -> f64;
}

/// Cosine similarity to a fixed reference under a synthetic embedder.
pub struct EmbeddingMonitor {
    name: String,
    embedder: Arc<SyntheticEmbedder>,
    reference: Vec<f64>,
}

impl EmbeddingMonitor {
    pub fn new(name: impl Into<String>, embedder: Arc<SyntheticEmbedder>, reference_image: &ImageTensor) -> Self {
        let reference = embedder
            .embed(reference_image)
            .expect("monitor reference must match the embedder dims");
        Self {
            name: name.into(),
            embedder,
            reference,
        }
    }
}

impl TraceMonitor for EmbeddingMonitor {
    fn name(&self) -> &str {
        &self.name
    }

    fn measure(&self, image: &ImageTensor) -> f64 {
        self.embedder
            .embed(image)
            .and_then(|e| cosine(&e, &self.reference))
            .unwrap_or(f64::NAN)
    }
}
