//! JSON-lines metrics stream: one object per event, append-only, crash-safe
//! on read (a trailing partial line is skipped and counted). The same schema
//! feeds training logs, evaluation output, and plotting.

use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricEvent {
    Episode {
        step: u64,
        episode: u64,
        #[serde(rename = "return")]
        ret: f64,
        length: usize,
        success: bool,
        expert_steps: usize,
    },
    Update {
        step: u64,
        grad_step: u64,
        source: String,
        fallback: bool,
        wm_total: f64,
        wm_complexity: f64,
        wm_image: f64,
        wm_reward: f64,
        wm_continue: f64,
        crspp_loss: f64,
        crspp_kl: f64,
        crspp_sim: f64,
        ensemble_nll: f64,
        actor_objective: f64,
        value_loss: f64,
        ig_mean: f64,
        sim_mean: f64,
        policy_entropy: f64,
        pema_range: f64,
        refresh: f64,
    },
    Eval {
        step: u64,
        episodes: usize,
        acr: f64,
        sr: f64,
        stability: f64,
    },
}

impl MetricEvent {
    pub fn step(&self) -> u64 {
        match self {
            MetricEvent::Episode { step, .. }
            | MetricEvent::Update { step, .. }
            | MetricEvent::Eval { step, .. } => *step,
        }
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            out: BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?),
        })
    }

    pub fn write(&mut self, event: &MetricEvent) -> std::io::Result<()> {
        let line = serde_json::to_string(event).expect("metric events always serialize");
        writeln!(self.out, "{line}")?;
        self.out.flush()
    }
}

/// Reads a metrics file, skipping malformed lines (including a trailing
/// partial line after a crash). Returns the events and the skip count.
pub fn read_metrics(path: &Path) -> std::io::Result<(Vec<MetricEvent>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    let mut skipped = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricEvent>(&line) {
            Ok(ev) => events.push(ev),
            Err(_) => skipped += 1,
        }
    }
    Ok((events, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("raif-metrics-{name}-{}", std::process::id()));
        p
    }

    fn sample(i: u64) -> MetricEvent {
        MetricEvent::Episode {
            step: i,
            episode: i,
            ret: -(i as f64),
            length: 10,
            success: i % 2 == 0,
            expert_steps: 0,
        }
    }

    #[test]
    fn write_read_roundtrip() {
        let path = tmp("roundtrip");
        {
            let mut w = MetricsWriter::create(&path).unwrap();
            for i in 0..100 {
                w.write(&sample(i)).unwrap();
            }
        }
        let (events, skipped) = read_metrics(&path).unwrap();
        assert_eq!(events.len(), 100);
        assert_eq!(skipped, 0);
        assert_eq!(events[3], sample(3));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn partial_trailing_line_tolerated() {
        let path = tmp("partial");
        {
            let mut w = MetricsWriter::create(&path).unwrap();
            for i in 0..100 {
                w.write(&sample(i)).unwrap();
            }
        }
        // simulate a crash mid-write
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"kind\":\"episode\",\"step\":9").unwrap();
        drop(f);
        let (events, skipped) = read_metrics(&path).unwrap();
        assert_eq!(events.len(), 100);
        assert_eq!(skipped, 1);
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn all_kinds_roundtrip() {
        let path = tmp("kinds");
        let update = MetricEvent::Update {
            step: 5,
            grad_step: 2,
            source: "positive".into(),
            fallback: false,
            wm_total: 1.0,
            wm_complexity: 0.5,
            wm_image: 0.2,
            wm_reward: 0.1,
            wm_continue: 0.2,
            crspp_loss: -0.1,
            crspp_kl: 0.3,
            crspp_sim: 0.7,
            ensemble_nll: 2.0,
            actor_objective: 0.4,
            value_loss: 0.6,
            ig_mean: 0.05,
            sim_mean: 0.6,
            policy_entropy: 1.4,
            pema_range: 3.0,
            refresh: -1.2,
        };
        let eval = MetricEvent::Eval {
            step: 9,
            episodes: 20,
            acr: -50.0,
            sr: 0.9,
            stability: 0.1,
        };
        {
            let mut w = MetricsWriter::create(&path).unwrap();
            w.write(&sample(1)).unwrap();
            w.write(&update).unwrap();
            w.write(&eval).unwrap();
        }
        let (events, _) = read_metrics(&path).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[1], update);
        assert_eq!(events[2], eval);
        std::fs::remove_file(&path).ok();
    }
}
