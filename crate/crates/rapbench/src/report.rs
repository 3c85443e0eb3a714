use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::RunError;

pub const REPORT_JSONL: &str = "report.jsonl";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LocalToRemote,
    RemoteToLocal,
}

impl Direction {
    fn short(self) -> &'static str {
        match self {
            Direction::LocalToRemote => "up",
            Direction::RemoteToLocal => "down",
        }
    }
}

/// Nearest-rank latency percentiles in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// `None` for an empty sample.
    pub fn from_ns(samples: &[u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |p: f64| {
            let k = ((p / 100.0) * s.len() as f64).ceil() as usize;
            s[k.clamp(1, s.len()) - 1] as f64 / 1e6
        };
        Some(Self {
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
            max: *s.last().unwrap() as f64 / 1e6,
        })
    }

    pub fn monotone(&self) -> bool {
        self.p50 <= self.p95 && self.p95 <= self.p99 && self.p99 <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicReport {
    pub direction: Direction,
    pub sent: u64,
    pub delivered: u64,
    pub lost_disconnect: u64,
    pub dropped_queue: u64,
    pub latency_ms: Option<Percentiles>,
    /// Deliveries during the traffic phase per second of scenario time.
    pub delivered_fps: f64,
    /// Delivered payloads whose encoding differs from what was published.
    pub payload_mismatches: u64,
    pub out_of_order: u64,
    pub duplicates: u64,
    /// Deliveries that match no published message.
    pub unmatched: u64,
    /// Duct's own counters balance for this topic.
    pub duct_balanced: bool,
    /// Where the losses happened, per component counter.
    pub breakdown: BTreeMap<String, u64>,
}

impl TopicReport {
    pub fn balanced(&self) -> bool {
        self.sent == self.delivered + self.lost_disconnect + self.dropped_queue
    }

    pub fn lost(&self) -> u64 {
        self.lost_disconnect + self.dropped_queue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub connects: u64,
    pub reconnects: u64,
    pub losses: u64,
    pub failed_attempts: u64,
    pub downtime_ms: f64,
    /// Sessions during which the bridge held every mirroring rule.
    pub sessions_synced: u64,
    /// Duct live with all rules registered when the run ended.
    pub final_live: bool,
    pub frames_up: u64,
    pub frames_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub bytes_total: u64,
    pub link_balanced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfPoint {
    /// Scenario time at the end of the window.
    pub t_s: f64,
    pub sim_advanced_ns: u64,
    pub wall_elapsed_ns: u64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub encoding: String,
    /// Time base the run was measured on.
    pub clock: String,
    pub duration_s: f64,
    pub drain_s: f64,
    pub topics: BTreeMap<String, TopicReport>,
    pub link: LinkReport,
    pub rtf: Vec<RtfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Run {
        scenario: String,
        seed: u64,
        encoding: String,
        clock: String,
        duration_s: f64,
        drain_s: f64,
    },
    Topic {
        topic: String,
        #[serde(flatten)]
        report: TopicReport,
    },
    Link(LinkReport),
    Rtf(RtfPoint),
}

impl RunReport {
    /// Delivered `/scan` rate, if the run carried scans.
    pub fn scan_fps(&self) -> Option<f64> {
        self.topics.get(robotsim::SCAN_TOPIC).map(|t| t.delivered_fps)
    }

    pub fn mean_rtf(&self) -> Option<f64> {
        if self.rtf.is_empty() {
            return None;
        }
        Some(self.rtf.iter().map(|p| p.rtf).sum::<f64>() / self.rtf.len() as f64)
    }

    /// Broken invariants; empty for a sound run.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, t) in &self.topics {
            if !t.balanced() {
                out.push(format!(
                    "{name}: sent {} != delivered {} + lost_disconnect {} + dropped_queue {}",
                    t.sent, t.delivered, t.lost_disconnect, t.dropped_queue
                ));
            }
            if let Some(p) = t.latency_ms {
                if !p.monotone() {
                    out.push(format!("{name}: percentiles not monotone {p:?}"));
                }
            }
            for (what, n) in [
                ("payload mismatches", t.payload_mismatches),
                ("out-of-order deliveries", t.out_of_order),
                ("duplicate deliveries", t.duplicates),
                ("unmatched deliveries", t.unmatched),
            ] {
                if n > 0 {
                    out.push(format!("{name}: {n} {what}"));
                }
            }
            if !t.duct_balanced {
                out.push(format!("{name}: duct counters unbalanced"));
            }
        }
        if !self.link.link_balanced {
            out.push("link counters unbalanced".into());
        }
        out
    }

    fn records(&self) -> Vec<Record> {
        let mut r = vec![Record::Run {
            scenario: self.scenario.clone(),
            seed: self.seed,
            encoding: self.encoding.clone(),
            clock: self.clock.clone(),
            duration_s: self.duration_s,
            drain_s: self.drain_s,
        }];
        r.extend(self.topics.iter().map(|(k, v)| Record::Topic {
            topic: k.clone(),
            report: v.clone(),
        }));
        r.push(Record::Link(self.link.clone()));
        r.extend(self.rtf.iter().copied().map(Record::Rtf));
        r
    }

    /// One JSON record per line: run header, topics, link, RTF windows.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for rec in self.records() {
            s.push_str(&serde_json::to_string(&rec).expect("report records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl<R: BufRead>(input: R) -> Result<Self, RunError> {
        let bad = |m: String| RunError::Report(m);
        let mut head = None;
        let mut topics = BTreeMap::new();
        let mut link = None;
        let mut rtf = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            match rec {
                Record::Run { .. } => head = Some(rec),
                Record::Topic { topic, report } => {
                    topics.insert(topic, report);
                }
                Record::Link(l) => link = Some(l),
                Record::Rtf(p) => rtf.push(p),
            }
        }
        let Some(Record::Run {
            scenario,
            seed,
            encoding,
            clock,
            duration_s,
            drain_s,
        }) = head
        else {
            return Err(bad("missing run record".into()));
        };
        let link = link.ok_or_else(|| bad("missing link record".into()))?;
        Ok(Self {
            scenario,
            seed,
            encoding,
            clock,
            duration_s,
            drain_s,
            topics,
            link,
            rtf,
        })
    }

    /// Reads `report.jsonl` from a directory, or the file itself.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let file: PathBuf = if path.is_dir() {
            path.join(REPORT_JSONL)
        } else {
            path.to_path_buf()
        };
        let f = std::fs::File::open(&file).map_err(|e| RunError::Io {
            path: file.clone(),
            source: e,
        })?;
        Self::from_jsonl(BufReader::new(f))
    }

    /// Writes the text table and the line records into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), RunError> {
        let io = |path: PathBuf| move |e| RunError::Io { path, source: e };
        std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
        let txt = dir.join(REPORT_TXT);
        std::fs::write(&txt, self.to_string()).map_err(io(txt.clone()))?;
        let jsonl = dir.join(REPORT_JSONL);
        std::fs::write(&jsonl, self.to_jsonl()).map_err(io(jsonl.clone()))?;
        Ok(())
    }
}

fn fmt_ms(p: Option<f64>) -> String {
    p.map_or_else(|| "-".into(), |v| format!("{v:.1}"))
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenario {}  seed {}  encoding {}  clock {}  duration {} s  drain {:.3} s",
            self.scenario, self.seed, self.encoding, self.clock, self.duration_s, self.drain_s
        )?;
        writeln!(
            f,
            "{:<18} {:>4} {:>7} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8}",
            "topic", "dir", "sent", "delivered", "lost_disc", "dropped_q", "p50_ms", "p95_ms", "p99_ms", "fps"
        )?;
        for (name, t) in &self.topics {
            writeln!(
                f,
                "{:<18} {:>4} {:>7} {:>9} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8.2}",
                name,
                t.direction.short(),
                t.sent,
                t.delivered,
                t.lost_disconnect,
                t.dropped_queue,
                fmt_ms(t.latency_ms.map(|p| p.p50)),
                fmt_ms(t.latency_ms.map(|p| p.p95)),
                fmt_ms(t.latency_ms.map(|p| p.p99)),
                t.delivered_fps
            )?;
        }
        let l = &self.link;
        writeln!(
            f,
            "link: connects {}  reconnects {}  failed attempts {}  downtime {:.1} ms  synced sessions {}  final live {}",
            l.connects, l.reconnects, l.failed_attempts, l.downtime_ms, l.sessions_synced, l.final_live
        )?;
        writeln!(
            f,
            "wire: up {} frames / {} B  down {} frames / {} B  total {} B",
            l.frames_up, l.bytes_up, l.frames_down, l.bytes_down, l.bytes_total
        )?;
        if let Some(mean) = self.mean_rtf() {
            let min = self.rtf.iter().map(|p| p.rtf).fold(f64::INFINITY, f64::min);
            let max = self.rtf.iter().map(|p| p.rtf).fold(f64::NEG_INFINITY, f64::max);
            writeln!(
                f,
                "rtf: mean {mean:.3}  min {min:.3}  max {max:.3}  over {} windows",
                self.rtf.len()
            )?;
        }
        let v = self.violations();
        if v.is_empty() {
            writeln!(f, "invariants: ok")
        } else {
            for line in v {
                writeln!(f, "VIOLATION {line}")?;
            }
            Ok(())
        }
    }
}

/// One metric of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
}

impl Delta {
    pub fn delta(&self) -> f64 {
        self.b - self.a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub encoding_a: String,
    pub encoding_b: String,
    pub rows: Vec<Delta>,
}

impl Comparison {
    pub fn all_zero(&self) -> bool {
        self.rows.iter().all(|d| d.delta() == 0.0)
    }

    pub fn get(&self, metric: &str) -> Option<&Delta> {
        self.rows.iter().find(|d| d.metric == metric)
    }

    /// `b / a` for total bytes on the wire.
    pub fn bytes_ratio(&self) -> Option<f64> {
        let d = self.get("bytes_total")?;
        (d.a > 0.0).then(|| d.b / d.a)
    }
}

type Metric = (&'static str, fn(&TopicReport) -> f64);

/// Per-metric deltas `b - a`. Both reports must come from the same scenario
/// and seed.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<Comparison, RunError> {
    if a.scenario != b.scenario {
        return Err(RunError::Mismatch(format!(
            "scenario {:?} vs {:?}",
            a.scenario, b.scenario
        )));
    }
    if a.seed != b.seed {
        return Err(RunError::Mismatch(format!("seed {} vs {}", a.seed, b.seed)));
    }
    let mut rows = Vec::new();
    let mut push = |metric: String, x: f64, y: f64| rows.push(Delta { metric, a: x, b: y });
    let (la, lb) = (&a.link, &b.link);
    push("bytes_total".into(), la.bytes_total as f64, lb.bytes_total as f64);
    push("bytes_up".into(), la.bytes_up as f64, lb.bytes_up as f64);
    push("bytes_down".into(), la.bytes_down as f64, lb.bytes_down as f64);
    push("frames_up".into(), la.frames_up as f64, lb.frames_up as f64);
    push("frames_down".into(), la.frames_down as f64, lb.frames_down as f64);
    push("reconnects".into(), la.reconnects as f64, lb.reconnects as f64);
    push("downtime_ms".into(), la.downtime_ms, lb.downtime_ms);
    push(
        "rtf_mean".into(),
        a.mean_rtf().unwrap_or(0.0),
        b.mean_rtf().unwrap_or(0.0),
    );
    let names: std::collections::BTreeSet<&String> = a.topics.keys().chain(b.topics.keys()).collect();
    for name in names {
        let ta = a.topics.get(name);
        let tb = b.topics.get(name);
        let field = |t: Option<&TopicReport>, f: fn(&TopicReport) -> f64| t.map_or(0.0, f);
        let metrics: [Metric; 8] = [
            ("sent", |t| t.sent as f64),
            ("delivered", |t| t.delivered as f64),
            ("lost_disconnect", |t| t.lost_disconnect as f64),
            ("dropped_queue", |t| t.dropped_queue as f64),
            ("p50_ms", |t| t.latency_ms.map_or(0.0, |p| p.p50)),
            ("p95_ms", |t| t.latency_ms.map_or(0.0, |p| p.p95)),
            ("p99_ms", |t| t.latency_ms.map_or(0.0, |p| p.p99)),
            ("fps", |t| t.delivered_fps),
        ];
        for (m, f) in metrics {
            push(format!("{name}.{m}"), field(ta, f), field(tb, f));
        }
    }
    Ok(Comparison {
        scenario: a.scenario.clone(),
        seed: a.seed,
        encoding_a: a.encoding.clone(),
        encoding_b: b.encoding.clone(),
        rows,
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "scenario {}  seed {}  a={}  b={}",
            self.scenario, self.seed, self.encoding_a, self.encoding_b
        )?;
        writeln!(f, "{:<28} {:>14} {:>14} {:>14}", "metric", "a", "b", "b-a")?;
        for d in &self.rows {
            let mut line = String::new();
            let _ = write!(line, "{:<28} {:>14} {:>14} {:>14}", d.metric, num(d.a), num(d.b), num(d.delta()));
            writeln!(f, "{}", line.trim_end())?;
        }
        if let Some(r) = self.bytes_ratio() {
            writeln!(f, "bytes on wire b/a: {r:.4}")?;
        }
        Ok(())
    }
}

fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}
