//! Empirical H2 norm by impulse-response simulation.
//!
//! For a fixed topology sequence `ν`, a unit impulse is applied to one input
//! channel at `k = 0` and the output energy is summed over the horizon while
//! a fresh loss pattern is drawn at every step. Averaging over loss draws and
//! summing over channels estimates the squared H2 norm for that `ν`.
//!
//! Steps use the edge structure directly instead of assembling the
//! `N n_x × N n_x` mode matrices; `(L̃ ⊗ M) x` is accumulated edge by edge.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graphs::{fill_bernoulli, EdgeIndexer};
use crate::linalg::Matrix;
use crate::model::{BlockTriple, ModelError, SwitchedMas};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("channel {channel} out of range (system has {channels} input channels)")]
    Channel { channel: usize, channels: usize },
    #[error("topology {index} out of range (family has {len})")]
    Topology { index: usize, len: usize },
    #[error("no switching sequences given")]
    NoSequences,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    /// Always topology `j`.
    Constant(usize),
    /// `0, 1, …, K-1, 0, …`, each held for `period` steps.
    Sequential { period: usize },
    /// Independent uniform draws from the family, one per step.
    Random { seed: u64 },
}

/// A topology sequence `ν`. The simulation horizon comes from [`McConfig`];
/// `horizon` here is only used when the sequence is materialized on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchingSequence {
    pub kind: SequenceKind,
    pub horizon: usize,
}

impl SwitchingSequence {
    pub fn constant(j: usize, horizon: usize) -> Self {
        SwitchingSequence {
            kind: SequenceKind::Constant(j),
            horizon,
        }
    }

    pub fn sequential(period: usize, horizon: usize) -> Self {
        SwitchingSequence {
            kind: SequenceKind::Sequential { period },
            horizon,
        }
    }

    pub fn random(seed: u64, horizon: usize) -> Self {
        SwitchingSequence {
            kind: SequenceKind::Random { seed },
            horizon,
        }
    }

    /// First `len` topology indices for a family of `n_topologies` graphs.
    pub fn realize(&self, n_topologies: usize, len: usize) -> Result<Vec<usize>, McError> {
        if n_topologies == 0 {
            return Err(McError::Config("empty family"));
        }
        Ok(match self.kind {
            SequenceKind::Constant(j) => {
                if j >= n_topologies {
                    return Err(McError::Topology {
                        index: j,
                        len: n_topologies,
                    });
                }
                vec![j; len]
            }
            SequenceKind::Sequential { period } => {
                if period == 0 {
                    return Err(McError::Config("sequential period must be positive"));
                }
                (0..len).map(|k| (k / period) % n_topologies).collect()
            }
            SequenceKind::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..len).map(|_| rng.gen_range(0..n_topologies)).collect()
            }
        })
    }

    /// Short identifier used in reports, e.g. `const3`, `seq1`, `rand7`.
    pub fn id(&self) -> alloc::string::String {
        match self.kind {
            SequenceKind::Constant(j) => alloc::format!("const{j}"),
            SequenceKind::Sequential { period } => alloc::format!("seq{period}"),
            SequenceKind::Random { seed } => alloc::format!("rand{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    /// Loss-sequence draws per input channel.
    pub n_samples: usize,
    pub horizon: usize,
    /// Allowed share of the total energy in the last tenth of the horizon.
    pub tail_tolerance: f64,
    pub seed: u64,
    /// Evolve only the disagreement part of the state and output.
    pub project_disagreement: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_samples: 10,
            horizon: 2000,
            tail_tolerance: 1e-6,
            seed: 0,
            project_disagreement: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n_samples == 0 {
            return Err(McError::Config("n_samples must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(McError::Config("horizon must be positive"));
        }
        if !(self.tail_tolerance > 0.0) {
            return Err(McError::Config("tail_tolerance must be positive"));
        }
        Ok(())
    }

    /// Generator for draw `draw` of channel `channel`; streams never overlap.
    pub fn draw_rng(&self, channel: usize, draw: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((channel * self.n_samples + draw) as u64);
        rng
    }
}

/// Output energy of one impulse response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseEnergy {
    pub energy: f64,
    /// Energy collected over the last tenth of the horizon.
    pub tail_energy: f64,
    /// Tail share above tolerance, or the response blew up.
    pub tail_exceeded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub channel: usize,
    pub energies: Vec<f64>,
    pub mean: f64,
    /// Standard error of `mean`.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    /// Estimated squared H2 norm for the given `ν`.
    pub mean: f64,
    pub stderr: f64,
    pub tail_exceeded: bool,
    pub per_channel: Vec<ChannelEstimate>,
}

/// Precomputed structure for repeated impulse responses of one system.
pub struct Simulator<'a> {
    mas: &'a SwitchedMas,
    n_edges: usize,
    /// `(lo, hi, position in E⁰)` per topology.
    topologies: Vec<Vec<(usize, usize, usize)>>,
    project: bool,
}

impl<'a> Simulator<'a> {
    pub fn new(mas: &'a SwitchedMas, project: bool) -> Result<Self, McError> {
        if project && mas.n_agents() < 2 {
            return Err(ModelError::TooFewAgents.into());
        }
        let idx = EdgeIndexer::for_family(&mas.family);
        let topologies = mas
            .family
            .graphs()
            .iter()
            .map(|g| {
                g.edges()
                    .map(|e| (e.lo(), e.hi(), idx.mu(e).expect("edge in union") - 1))
                    .collect()
            })
            .collect();
        Ok(Simulator {
            mas,
            n_edges: idx.len(),
            topologies,
            project,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.mas.n_agents() * self.mas.blocks.n_w()
    }

    /// Impulse on channel `channel` (0-based), topologies from `nu` (one
    /// per step), loss patterns from `rng`.
    pub fn impulse_energy<R: Rng + ?Sized>(
        &self,
        nu: &[usize],
        channel: usize,
        tail_tolerance: f64,
        rng: &mut R,
    ) -> Result<ImpulseEnergy, McError> {
        let channels = self.n_channels();
        if channel >= channels {
            return Err(McError::Channel { channel, channels });
        }
        if let Some(&bad) = nu.iter().find(|&&j| j >= self.topologies.len()) {
            return Err(McError::Topology {
                index: bad,
                len: self.topologies.len(),
            });
        }
        let blocks = &self.mas.blocks;
        let n = self.mas.n_agents();
        let (n_x, n_w, n_z) = (blocks.n_x(), blocks.n_w(), blocks.n_z());
        let horizon = nu.len();
        let tail_start = horizon - horizon / 10;

        let mut w = vec![0.0; n * n_w];
        w[channel] = 1.0;
        if self.project {
            project(&mut w, n_w);
        }
        let mut x = vec![0.0; n * n_x];
        let mut x_next = vec![0.0; n * n_x];
        let mut z = vec![0.0; n * n_z];
        let mut active = Vec::with_capacity(self.n_edges);
        let mut energy = 0.0;
        let mut tail = 0.0;
        for (k, &j) in nu.iter().enumerate() {
            fill_bernoulli(&mut active, self.n_edges, self.mas.p, rng);
            let edges = &self.topologies[j];
            let (input, triple_x, triple_z) = if k == 0 {
                (&w, &blocks.b, &blocks.d)
            } else {
                (&x, &blocks.a, &blocks.c)
            };
            apply(triple_x, edges, &active, input, &mut x_next);
            apply(triple_z, edges, &active, input, &mut z);
            if self.project {
                project(&mut x_next, n_x);
                project(&mut z, n_z);
            }
            let e: f64 = z.iter().map(|v| v * v).sum();
            energy += e;
            if k >= tail_start {
                tail += e;
            }
            core::mem::swap(&mut x, &mut x_next);
            if !energy.is_finite() {
                break;
            }
        }
        let tail_exceeded = !energy.is_finite() || tail > tail_tolerance * energy;
        Ok(ImpulseEnergy {
            energy,
            tail_energy: tail,
            tail_exceeded,
        })
    }

    /// All `cfg.n_samples` draws for one channel, plus whether any of them
    /// tripped the tail criterion. `nu` must hold `cfg.horizon` entries.
    pub fn channel(
        &self,
        nu: &[usize],
        channel: usize,
        cfg: &McConfig,
    ) -> Result<(ChannelEstimate, bool), McError> {
        cfg.validate()?;
        let mut energies = Vec::with_capacity(cfg.n_samples);
        let mut tail_exceeded = false;
        for draw in 0..cfg.n_samples {
            let mut rng = cfg.draw_rng(channel, draw);
            let r = self.impulse_energy(nu, channel, cfg.tail_tolerance, &mut rng)?;
            tail_exceeded |= r.tail_exceeded;
            energies.push(r.energy);
        }
        Ok((channel_estimate(channel, energies), tail_exceeded))
    }

    pub fn estimate(&self, nu: &SwitchingSequence, cfg: &McConfig) -> Result<McEstimate, McError> {
        cfg.validate()?;
        let nu = nu.realize(self.topologies.len(), cfg.horizon)?;
        let mut per_channel = Vec::with_capacity(self.n_channels());
        let mut tail_exceeded = false;
        for channel in 0..self.n_channels() {
            let (est, tail) = self.channel(&nu, channel, cfg)?;
            tail_exceeded |= tail;
            per_channel.push(est);
        }
        Ok(combine(per_channel, tail_exceeded))
    }
}

/// Sample mean and standard error of one channel's draws.
pub fn channel_estimate(channel: usize, energies: Vec<f64>) -> ChannelEstimate {
    let n = energies.len() as f64;
    if energies.iter().all(|e| *e == energies[0]) {
        // Identical draws (no randomness): keep the exact value.
        return ChannelEstimate {
            channel,
            mean: energies[0],
            stderr: 0.0,
            energies,
        };
    }
    let mean = energies.iter().sum::<f64>() / n;
    let stderr = if energies.len() > 1 {
        let var = energies
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (n - 1.0);
        libm::sqrt(var / n)
    } else {
        0.0
    };
    ChannelEstimate {
        channel,
        energies,
        mean,
        stderr,
    }
}

/// Sums channel means; channels are independent so variances add.
pub fn combine(per_channel: Vec<ChannelEstimate>, tail_exceeded: bool) -> McEstimate {
    let mean = per_channel.iter().map(|c| c.mean).sum();
    let var: f64 = per_channel.iter().map(|c| c.stderr * c.stderr).sum();
    McEstimate {
        mean,
        stderr: libm::sqrt(var),
        tail_exceeded,
        per_channel,
    }
}

/// `out = (I ⊗ M^d + L̃ ⊗ M^c + L ⊗ M^p) v` with `L̃` given by the active
/// flags on `edges`.
fn apply(
    t: &BlockTriple,
    edges: &[(usize, usize, usize)],
    active: &[bool],
    v: &[f64],
    out: &mut [f64],
) {
    let (rows, cols) = t.shape();
    let n = v.len() / cols;
    for i in 0..n {
        mat_vec(
            &t.decoupled,
            &v[i * cols..(i + 1) * cols],
            &mut out[i * rows..(i + 1) * rows],
        );
    }
    let coupled = !t.coupled.is_zero();
    let pattern = !t.pattern.is_zero();
    if !coupled && !pattern {
        return;
    }
    let mut diff = vec![0.0; cols];
    let mut contrib = vec![0.0; rows];
    for &(a, b, mu) in edges {
        for c in 0..cols {
            diff[c] = v[a * cols + c] - v[b * cols + c];
        }
        for (m, on) in [(&t.coupled, coupled && active[mu]), (&t.pattern, pattern)] {
            if !on {
                continue;
            }
            mat_vec(m, &diff, &mut contrib);
            for r in 0..rows {
                out[a * rows + r] += contrib[r];
                out[b * rows + r] -= contrib[r];
            }
        }
    }
}

fn mat_vec(m: &Matrix, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = m.row(r).iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Removes the agent average from a stacked vector with `width` components
/// per agent.
fn project(v: &mut [f64], width: usize) {
    let n = v.len() / width;
    for c in 0..width {
        let mean = (0..n).map(|i| v[i * width + c]).sum::<f64>() / n as f64;
        for i in 0..n {
            v[i * width + c] -= mean;
        }
    }
}

/// Energy of one impulse response; `s` is the 0-based input channel.
pub fn impulse_energy<R: Rng + ?Sized>(
    mas: &SwitchedMas,
    nu: &SwitchingSequence,
    s: usize,
    cfg: &McConfig,
    rng: &mut R,
) -> Result<ImpulseEnergy, McError> {
    cfg.validate()?;
    let sim = Simulator::new(mas, cfg.project_disagreement)?;
    let nu = nu.realize(mas.family.len(), cfg.horizon)?;
    sim.impulse_energy(&nu, s, cfg.tail_tolerance, rng)
}

pub fn estimate_h2(
    mas: &SwitchedMas,
    nu: &SwitchingSequence,
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    Simulator::new(mas, cfg.project_disagreement)?.estimate(nu, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub estimates: Vec<McEstimate>,
    /// Index of the largest mean.
    pub argmax: usize,
    pub max: f64,
}

/// Estimates for every candidate sequence; the largest is an empirical
/// lower bound on the worst case over all sequences.
pub fn worst_case_sweep(
    mas: &SwitchedMas,
    sequences: &[SwitchingSequence],
    cfg: &McConfig,
) -> Result<SweepResult, McError> {
    if sequences.is_empty() {
        return Err(McError::NoSequences);
    }
    let sim = Simulator::new(mas, cfg.project_disagreement)?;
    let estimates = sequences
        .iter()
        .map(|nu| sim.estimate(nu, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(sweep_summary(estimates))
}

/// Locates the maximum of already computed estimates.
pub fn sweep_summary(estimates: Vec<McEstimate>) -> SweepResult {
    let mut argmax = 0;
    for (i, e) in estimates.iter().enumerate() {
        if e.mean > estimates[argmax].mean {
            argmax = i;
        }
    }
    let max = estimates[argmax].mean;
    SweepResult {
        estimates,
        argmax,
        max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{laplacian, lossy_laplacian, Graph, GraphFamily, LossMask};
    use crate::model::{assemble_mode, consensus_example, disagreement_projection};

    fn mas(graphs: Vec<Graph>, p: f64) -> SwitchedMas {
        let fam = GraphFamily::with_exact_bounds(graphs).unwrap();
        SwitchedMas::new(fam, p, consensus_example(0.1).unwrap()).unwrap()
    }

    /// Dense reference: assemble the full mode matrices at every step.
    fn dense_energy(
        m: &SwitchedMas,
        nu: &[usize],
        channel: usize,
        seed: u64,
        project: bool,
    ) -> f64 {
        let idx = EdgeIndexer::for_family(&m.family);
        let n = m.n_agents();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = |v: Vec<f64>| -> Vec<f64> {
            if !project {
                return v;
            }
            let u = disagreement_projection(n).unwrap();
            let uu = &u * &u.transpose();
            uu.mul_vec(&v)
        };
        let mut w = vec![0.0; n];
        w[channel] = 1.0;
        let w = proj(w);
        let mut x = vec![0.0; n];
        let mut energy = 0.0;
        for (k, &j) in nu.iter().enumerate() {
            let mut flags = Vec::new();
            fill_bernoulli(&mut flags, idx.len(), m.p, &mut rng);
            let mask = LossMask::from_flags(&idx, flags);
            let g = m.family.graph(j);
            let mode = assemble_mode(&m.blocks, &lossy_laplacian(g, &mask), &laplacian(g)).unwrap();
            let (z, xn) = if k == 0 {
                (mode.d.mul_vec(&w), mode.b.mul_vec(&w))
            } else {
                (mode.c.mul_vec(&x), mode.a.mul_vec(&x))
            };
            let z = proj(z);
            energy += z.iter().map(|v| v * v).sum::<f64>();
            x = proj(xn);
        }
        energy
    }

    #[test]
    fn structured_step_matches_dense_assembly() {
        let m = mas(
            vec![Graph::cycle(5).unwrap(), Graph::complete(5).unwrap()],
            0.6,
        );
        let nu = SwitchingSequence::sequential(3, 0).realize(2, 60).unwrap();
        let sim = Simulator::new(&m, true).unwrap();
        for channel in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let fast = sim.impulse_energy(&nu, channel, 1e-6, &mut rng).unwrap();
            let dense = dense_energy(&m, &nu, channel, 11, true);
            assert!((fast.energy - dense).abs() < 1e-12 * dense.max(1.0));
        }
    }

    #[test]
    fn deterministic_two_agents() {
        // N = 2, one edge, p = 1: z_k = L x_k, disagreement e = x1 - x2
        // evolves as e⁺ = (1 - 2κ) e.
        let m = mas(vec![Graph::complete(2).unwrap()], 1.0);
        let cfg = McConfig {
            horizon: 400,
            ..McConfig::default()
        };
        let est = estimate_h2(&m, &SwitchingSequence::constant(0, 400), &cfg).unwrap();
        let r: f64 = 1.0 - 2.0 * 0.1;
        // Channel s: e_1 = ±1, z = (e, -e) so ‖z‖² = 2e², summed over k ≥ 1.
        let per_channel = 2.0 * (1.0 - r.powi(2 * 399)) / (1.0 - r * r);
        assert!((est.mean - 2.0 * per_channel).abs() < 1e-10);
        assert_eq!(est.stderr, 0.0);
        assert!(!est.tail_exceeded);
    }

    #[test]
    fn p_zero_raises_tail_flag() {
        let m = mas(vec![Graph::cycle(4).unwrap()], 0.0);
        let cfg = McConfig {
            horizon: 200,
            n_samples: 2,
            ..McConfig::default()
        };
        let est = estimate_h2(&m, &SwitchingSequence::constant(0, 200), &cfg).unwrap();
        assert!(est.tail_exceeded);
    }

    #[test]
    fn sequences_stay_in_range() {
        for seq in [
            SwitchingSequence::constant(2, 50),
            SwitchingSequence::sequential(4, 50),
            SwitchingSequence::random(9, 50),
        ] {
            assert!(seq.realize(3, 50).unwrap().iter().all(|&j| j < 3));
        }
        assert!(SwitchingSequence::constant(3, 5).realize(3, 5).is_err());
        assert_eq!(
            SwitchingSequence::sequential(2, 0).realize(3, 7).unwrap(),
            [0, 0, 1, 1, 2, 2, 0]
        );
    }
}
