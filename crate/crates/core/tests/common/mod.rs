#![allow(dead_code)]

use std::path::Path;

use chrono::{TimeZone, Utc};
use narrative_engine::cluster::ClusterId;
use narrative_engine::narrative::NarrativeDefinition;
use narrative_engine::pipeline::{run_pipeline, RunOptions};
use narrative_engine::synth::{random_unit_vectors, synthetic_units, MixtureStream, SyntheticPoint, TableEmbedder};
use narrative_engine::workspace::{ReviewMode, Workspace, WorkspaceConfig};

pub const DIM: usize = 32;

/// Three components; the first two sit at cosine `sibling` from each other.
pub fn means(sibling: f64, seed: u64) -> Vec<Vec<f32>> {
    let r = random_unit_vectors(3, DIM, seed);
    let m0: Vec<f64> = r[0].iter().map(|&x| f64::from(x)).collect();
    let u: Vec<f64> = r[1].iter().map(|&x| f64::from(x)).collect();
    let d: f64 = m0.iter().zip(&u).map(|(a, b)| a * b).sum();
    let perp: Vec<f64> = u.iter().zip(&m0).map(|(x, m)| x - d * m).collect();
    let pn = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = (1.0 - sibling * sibling).sqrt();
    let m1 = m0.iter().zip(&perp).map(|(m, p)| (sibling * m + s * p / pn) as f32).collect();
    vec![r[0].clone(), m1, r[2].clone()]
}

pub struct Fixture {
    pub ws: Workspace,
    pub batches: Vec<Vec<SyntheticPoint>>,
}

impl Fixture {
    pub fn new(root: &Path, steps: u32, mode: ReviewMode, seed: u64) -> Self {
        let start = Utc.with_ymd_and_hms(2022, 2, 24, 0, 0, 0).unwrap();
        let mut cfg = WorkspaceConfig::new(start);
        cfg.review_mode = mode;
        cfg.seed = seed;
        cfg.cluster.silhouette_sample = 128;
        let ws = Workspace::init(root, cfg).unwrap();
        let mut stream = MixtureStream::with_means(&means(0.75, seed + 11), 300.0, seed);
        let batches: Vec<Vec<SyntheticPoint>> = (0..steps).map(|t| stream.batch_with_counts(t, &[30, 25, 20])).collect();
        ws.write_units(&synthetic_units(&batches, start, 7)).unwrap();
        Self { ws, batches }
    }

    pub fn provider(&self) -> TableEmbedder {
        TableEmbedder::from_points(DIM, self.batches.iter().flatten())
    }

    pub fn run(&self, opts: &RunOptions) -> narrative_engine::pipeline::RunReport {
        run_pipeline(&self.ws, self.provider(), None, opts).unwrap()
    }

    /// Cluster holding the first unit drawn from component `c`.
    pub fn cluster_of_component(&self, c: usize) -> ClusterId {
        let cp = self.ws.latest_checkpoint().unwrap().unwrap();
        let unit = &self.batches[0].iter().find(|p| p.component == c).unwrap().unit.unit_id;
        cp.state.clusters().iter().find(|k| k.all_members().any(|m| m == unit)).unwrap().id
    }

    /// Runs timestep 0, seeds narrative `id` on component 0, then runs the rest.
    pub fn with_narrative(&self, id: &str) -> ClusterId {
        self.run(&RunOptions {
            to: Some(0),
            ..Default::default()
        });
        let seed = self.cluster_of_component(0);
        self.ws.save_narrative(id, &NarrativeDefinition::new(id, seed)).unwrap();
        self.run(&RunOptions::default());
        seed
    }
}
