//! Closed-loop Monte Carlo simulation of both layers.
//!
//! The upper layer runs a certainty-equivalence LQG controller whose input is
//! radially saturated to the `u_max` ball; the lower layer runs the interface
//! law on top of its own Kalman filter. Every Gaussian draw comes from a
//! ChaCha stream keyed by `(seed, trial, stream)`, so a trial's trajectory
//! does not depend on which thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::estimation::{estimate_step, EstimatorSpec};
use crate::linalg::{psd_sqrt_unchecked, Mat, Vector};
use crate::model::{ArchitectureSpec, LinearSystemSpec, SimCfg, UpperControllerCfg};
use crate::parallel::{map_indexed, Exec};
use crate::synthesis::{evaluate_v, lqr_gain, Certificate, InterfaceDesign};

/// Number of trials simulated per parallel batch before folding into the
/// running statistics.
const BATCH: usize = 256;

/// Standard-error multiple used by every empirical inequality check.
pub const SE_SLACK: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Init1 = 0,
    Init2 = 1,
    Process1 = 2,
    Measure1 = 3,
    Process2 = 4,
    Measure2 = 5,
}

fn stream_rng(seed: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial << 3) | stream as u64);
    rng
}

/// Draws `N(mean, S S^T)` for a precomputed square root `S`.
fn gaussian(rng: &mut ChaCha8Rng, mean: &Vector, root: &Mat) -> Vector {
    let xi = Vector::from_fn(root.ncols(), |_, _| StandardNormal.sample(rng));
    mean + root * xi
}

/// Upper-layer LQR gain `K_lqr` (applied as `u1 = -K_lqr x̂1`).
pub fn lqg_gain(upper: &LinearSystemSpec, cfg: &UpperControllerCfg) -> Result<Mat> {
    Ok(-lqr_gain(&upper.a, &upper.b, cfg.p_q.as_mat(), cfg.p_r.as_mat())?)
}

/// Radial projection onto the ball of radius `u_max`.
pub fn saturate(u: &Vector, u_max: f64) -> Vector {
    let norm = u.norm();
    if norm <= u_max {
        u.clone()
    } else {
        u * (u_max / norm)
    }
}

/// `R u1 + Q x̂1 + K (x̂2 - P x̂1)`, without saturation.
pub fn interface_control(design: &InterfaceDesign, u1: &Vector, xhat1: &Vector, xhat2: &Vector) -> Result<Vector> {
    let p = &design.maps.p;
    if u1.len() != design.r.ncols() {
        return Err(dim_err("u1", design.r.ncols(), u1.len()));
    }
    if xhat1.len() != p.ncols() {
        return Err(dim_err("x̂1", p.ncols(), xhat1.len()));
    }
    if xhat2.len() != p.nrows() {
        return Err(dim_err("x̂2", p.nrows(), xhat2.len()));
    }
    Ok(&design.r * u1 + &design.maps.q * xhat1 + design.k() * (xhat2 - p * xhat1))
}

/// One layer's trajectory, indexed by `t = 0..=T`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerTrace {
    pub x: Vec<Vector>,
    pub xhat: Vec<Vector>,
    pub y: Vec<Vector>,
    pub u: Vec<Vector>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialTrace {
    pub upper: LayerTrace,
    pub lower: LayerTrace,
    /// `|y1 - y2|`
    pub dist: Vec<f64>,
    /// Simulation function at `(x̂1, x̂2)`.
    pub v: Vec<f64>,
}

impl TrialTrace {
    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

/// Everything a trial needs that does not change between trials.
struct Plant {
    k_lqr: Mat,
    roots: [Mat; 6],
}

impl Plant {
    fn new(arch: &ArchitectureSpec, design: &InterfaceDesign) -> Result<Self> {
        let (e1, e2) = &design.estimators;
        Ok(Plant {
            k_lqr: lqg_gain(&arch.upper, &arch.upper_controller)?,
            roots: [
                psd_sqrt_unchecked(e1.sigma_e.as_mat()),
                psd_sqrt_unchecked(e2.sigma_e.as_mat()),
                psd_sqrt_unchecked(arch.upper.sigma_w.as_mat()),
                psd_sqrt_unchecked(arch.upper.sigma_v.as_mat()),
                psd_sqrt_unchecked(arch.lower.sigma_w.as_mat()),
                psd_sqrt_unchecked(arch.lower.sigma_v.as_mat()),
            ],
        })
    }
}

fn check_design(arch: &ArchitectureSpec, design: &InterfaceDesign) -> Result<()> {
    let (up, lo) = (&arch.upper, &arch.lower);
    let expect = |what: &str, got: (usize, usize), want: (usize, usize)| {
        if got == want {
            Ok(())
        } else {
            Err(dim_err(what, format!("{}x{}", want.0, want.1), format!("{}x{}", got.0, got.1)))
        }
    };
    expect("P", design.maps.p.shape(), (lo.n(), up.n()))?;
    expect("Q", design.maps.q.shape(), (lo.m(), up.n()))?;
    expect("R", design.r.shape(), (lo.m(), up.m()))?;
    expect("K", design.k().shape(), (lo.m(), lo.n()))?;
    expect("M", design.cert.m.shape(), (lo.n(), lo.n()))?;
    expect("L1", design.estimators.0.l.shape(), (up.n(), up.p()))?;
    expect("L2", design.estimators.1.l.shape(), (lo.n(), lo.p()))?;
    Ok(())
}

fn simulate(
    arch: &ArchitectureSpec,
    design: &InterfaceDesign,
    plant: &Plant,
    horizon: usize,
    trial: u64,
    seed: u64,
) -> Result<TrialTrace> {
    let (up, lo) = (&arch.upper, &arch.lower);
    let (e1, e2): (&EstimatorSpec, &EstimatorSpec) = (&design.estimators.0, &design.estimators.1);
    let rng = |s: Stream| stream_rng(seed, trial, s);
    let (mut w1, mut v1, mut w2, mut v2) =
        (rng(Stream::Process1), rng(Stream::Measure1), rng(Stream::Process2), rng(Stream::Measure2));
    let [r_e1, r_e2, r_w1, r_v1, r_w2, r_v2] = &plant.roots;
    let zero = |n: usize| Vector::zeros(n);

    let mut x1 = gaussian(&mut rng(Stream::Init1), &up.mu0, r_e1);
    let mut x2 = gaussian(&mut rng(Stream::Init2), &lo.mu0, r_e2);
    let mut xh1 = up.mu0.clone();
    let mut xh2 = lo.mu0.clone();
    let mut tr = TrialTrace::default();
    for t in 0..=horizon {
        let y1 = &up.c * &x1 + gaussian(&mut v1, &zero(up.p()), r_v1);
        let y2 = &lo.c * &x2 + gaussian(&mut v2, &zero(lo.p()), r_v2);
        let u1 = saturate(&(-&plant.k_lqr * &xh1), arch.u_max);
        let u2 = interface_control(design, &u1, &xh1, &xh2)?;
        let dist = (&y1 - &y2).norm();
        let v = evaluate_v(&design.cert, &design.maps, &xh1, &xh2)?;
        if !dist.is_finite() || !v.is_finite() {
            return Err(Error::Invalid(format!("trial {trial} diverged at t = {t}")));
        }
        tr.dist.push(dist);
        tr.v.push(v);
        let nx1 = &up.a * &x1 + &up.b * &u1 + gaussian(&mut w1, &zero(up.n()), r_w1);
        let nx2 = &lo.a * &x2 + &lo.b * &u2 + gaussian(&mut w2, &zero(lo.n()), r_w2);
        let nxh1 = estimate_step(up, e1, &xh1, &u1, &y1)?;
        let nxh2 = estimate_step(lo, e2, &xh2, &u2, &y2)?;
        for (layer, x, xh, y, u) in [(&mut tr.upper, &x1, &xh1, y1, u1), (&mut tr.lower, &x2, &xh2, y2, u2)] {
            layer.x.push(x.clone());
            layer.xhat.push(xh.clone());
            layer.y.push(y);
            layer.u.push(u);
        }
        if t < horizon {
            (x1, x2, xh1, xh2) = (nx1, nx2, nxh1, nxh2);
        }
    }
    Ok(tr)
}

/// Simulates one trial with the horizon from `arch.sim`.
pub fn simulate_trial(arch: &ArchitectureSpec, design: &InterfaceDesign, trial: u64, seed: u64) -> Result<TrialTrace> {
    check_design(arch, design)?;
    let plant = Plant::new(arch, design)?;
    simulate(arch, design, &plant, arch.sim.horizon, trial, seed)
}

/// Running mean and variance (Welford), updated in trial order.
#[derive(Debug, Clone, Default)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn push(&mut self, xs: &[f64]) {
        if self.n == 0 {
            self.mean = vec![0.0; xs.len()];
            self.m2 = vec![0.0; xs.len()];
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(xs) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    /// Sample standard deviation (zero for a single sample).
    fn std(&self) -> Vec<f64> {
        let denom = self.n.saturating_sub(1).max(1) as f64;
        self.m2.iter().map(|s| (s / denom).max(0.0).sqrt()).collect()
    }

    fn se(&self) -> Vec<f64> {
        let rt = (self.n as f64).sqrt();
        self.std().iter().map(|s| s / rt).collect()
    }
}

/// Per-time-step statistics over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub mean_dist: Vec<f64>,
    pub std_dist: Vec<f64>,
    pub ci95: Vec<f64>,
    pub mean_v: Vec<f64>,
    /// Standard error of `mean_v`.
    pub se_v: Vec<f64>,
    /// Mean of `|C1 x1 - C2 x2|^2` (noise-free outputs).
    pub mean_gap_sq: Vec<f64>,
    pub se_gap_sq: Vec<f64>,
    pub mean_norm_y1: Vec<f64>,
    pub mean_norm_y2: Vec<f64>,
    pub epsilon: f64,
    pub trials: usize,
    pub seed: u64,
    pub max_over_t_mean_dist: f64,
}

impl McSummary {
    pub fn horizon(&self) -> usize {
        self.mean_dist.len().saturating_sub(1)
    }

    /// `max_t (mean_dist_t - ci95_t)`.
    pub fn max_lower_confidence(&self) -> f64 {
        self.mean_dist.iter().zip(&self.ci95).map(|(m, c)| m - c).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether the mean output distance respects ε once the sampling error
    /// is accounted for.
    pub fn bound_respected(&self) -> bool {
        self.max_lower_confidence() <= self.epsilon
    }

    /// Steps where the mean squared noise-free output gap exceeds `mean_V`
    /// by more than [`SE_SLACK`] standard errors.
    pub fn gap_violations(&self) -> Vec<usize> {
        (0..self.mean_gap_sq.len())
            .filter(|&t| self.mean_gap_sq[t] > self.mean_v[t] + SE_SLACK * (self.se_v[t] + self.se_gap_sq[t]))
            .collect()
    }
}

/// Summary plus the first few raw traces.
#[derive(Debug, Clone)]
pub struct McOutput {
    pub summary: McSummary,
    pub traces: Vec<TrialTrace>,
}

/// Runs `sim.trials` trials and aggregates them in trial order, keeping the
/// first `keep` traces.
pub fn monte_carlo_with(
    arch: &ArchitectureSpec,
    design: &InterfaceDesign,
    sim: &SimCfg,
    keep: usize,
    exec: Exec,
) -> Result<McOutput> {
    if sim.trials == 0 {
        return Err(Error::Invalid("trials must be positive".into()));
    }
    check_design(arch, design)?;
    let plant = Plant::new(arch, design)?;
    let mut dist = Moments::default();
    let mut v = Moments::default();
    let mut gap = Moments::default();
    let mut y1 = Moments::default();
    let mut y2 = Moments::default();
    let mut traces = Vec::with_capacity(keep.min(sim.trials));
    let mut start = 0;
    while start < sim.trials {
        let len = BATCH.min(sim.trials - start);
        let batch = map_indexed(len, exec, |i| {
            simulate(arch, design, &plant, sim.horizon, (start + i) as u64, sim.seed)
        });
        for tr in batch {
            let tr = tr?;
            dist.push(&tr.dist);
            v.push(&tr.v);
            let gaps: Vec<f64> = tr
                .upper
                .x
                .iter()
                .zip(&tr.lower.x)
                .map(|(a, b)| (&arch.upper.c * a - &arch.lower.c * b).norm_squared())
                .collect();
            gap.push(&gaps);
            y1.push(&tr.upper.y.iter().map(|y| y.norm()).collect::<Vec<_>>());
            y2.push(&tr.lower.y.iter().map(|y| y.norm()).collect::<Vec<_>>());
            if traces.len() < keep {
                traces.push(tr);
            }
        }
        start += len;
    }
    let std_dist = dist.std();
    let rt = (sim.trials as f64).sqrt();
    let ci95 = std_dist.iter().map(|s| 1.96 * s / rt).collect();
    let max_over_t_mean_dist = dist.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let summary = McSummary {
        std_dist,
        ci95,
        se_v: v.se(),
        mean_v: v.mean,
        se_gap_sq: gap.se(),
        mean_gap_sq: gap.mean,
        mean_norm_y1: y1.mean,
        mean_norm_y2: y2.mean,
        mean_dist: dist.mean,
        epsilon: design.cert.epsilon,
        trials: sim.trials,
        seed: sim.seed,
        max_over_t_mean_dist,
    };
    Ok(McOutput { summary, traces })
}

/// Monte Carlo with the configuration's own trial count, horizon and seed.
pub fn monte_carlo(arch: &ArchitectureSpec, design: &InterfaceDesign) -> Result<McSummary> {
    Ok(monte_carlo_with(arch, design, &arch.sim, 0, Exec::default())?.summary)
}

/// Slack of the expected contraction, per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `mean_V[t+1] - (ρ mean_V[t] + α)` for `t < T`.
    pub one_step: Vec<f64>,
    /// `mean_V[t] - (ρ^t V0 + α (1 - ρ^t)/(1 - ρ))`.
    pub recursion: Vec<f64>,
    /// Steps whose one-step slack exceeds [`SE_SLACK`] standard errors.
    pub one_step_flags: Vec<usize>,
    /// Steps whose recursion slack exceeds [`SE_SLACK`] standard errors.
    pub recursion_flags: Vec<usize>,
}

/// Compares `mean_V` with the contraction inequality and its unrolled form,
/// where `v0` is `V` at the initial means.
pub fn contraction_report(summary: &McSummary, cert: &Certificate, v0: f64) -> ContractionReport {
    let (rho, alpha) = (cert.rho, cert.alpha);
    let mv = &summary.mean_v;
    let se = &summary.se_v;
    let one_step: Vec<f64> = mv.windows(2).map(|w| w[1] - (rho * w[0] + alpha)).collect();
    let recursion: Vec<f64> = mv
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let rt = rho.powi(t as i32);
            m - (rt * v0 + alpha * (1.0 - rt) / (1.0 - rho))
        })
        .collect();
    let one_step_flags = (0..one_step.len()).filter(|&t| one_step[t] > SE_SLACK * (se[t + 1] + rho * se[t])).collect();
    let recursion_flags = (0..recursion.len()).filter(|&t| recursion[t] > SE_SLACK * se[t]).collect();
    ContractionReport { one_step, recursion, one_step_flags, recursion_flags }
}

/// `V` at the initial means `(μ0¹, μ0²)`.
pub fn initial_v(arch: &ArchitectureSpec, design: &InterfaceDesign) -> Result<f64> {
    evaluate_v(&design.cert, &design.maps, &arch.upper.mu0, &arch.lower.mu0)
}

/// Summary CSV: `t,mean_dist,std_dist,ci95,mean_V,epsilon`.
pub fn summary_csv(s: &McSummary) -> String {
    let mut out = String::from("t,mean_dist,std_dist,ci95,mean_V,epsilon\n");
    for t in 0..s.mean_dist.len() {
        out.push_str(&format!(
            "{t},{},{},{},{},{}\n",
            s.mean_dist[t], s.std_dist[t], s.ci95[t], s.mean_v[t], s.epsilon
        ));
    }
    out
}

/// Per-trial CSV: `trial,t,dist,V,norm_y1,norm_y2`.
pub fn traces_csv(traces: &[TrialTrace]) -> String {
    let mut out = String::from("trial,t,dist,V,norm_y1,norm_y2\n");
    for (i, tr) in traces.iter().enumerate() {
        for t in 0..tr.len() {
            out.push_str(&format!(
                "{i},{t},{},{},{},{}\n",
                tr.dist[t],
                tr.v[t],
                tr.upper.y[t].norm(),
                tr.lower.y[t].norm()
            ));
        }
    }
    out
}

/// Plot data: `t,mean_dist,epsilon`.
pub fn plot_csv(s: &McSummary) -> String {
    let mut out = String::from("t,mean_dist,epsilon\n");
    for (t, m) in s.mean_dist.iter().enumerate() {
        out.push_str(&format!("{t},{m},{}\n", s.epsilon));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymPsd;
    use crate::synthesis::{DesignMeta, InterfaceMaps};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn scalar_design(r: f64, q: f64, k: f64, p: f64) -> InterfaceDesign {
        let one = |x: f64| Mat::from_element(1, 1, x);
        let est = EstimatorSpec { l: one(0.0), sigma_e: SymPsd::zeros(1) };
        InterfaceDesign {
            maps: InterfaceMaps { p: one(p), q: one(q), residual_cp: 0.0, residual_paq: 0.0 },
            r: one(r),
            cert: Certificate {
                m: one(1.0),
                k: one(k),
                lambda: 0.5,
                rho: 2.0 / 3.0,
                alpha: 0.0,
                trace_s: 0.0,
                epsilon: 0.0,
            },
            estimators: (est.clone(), est),
            meta: DesignMeta::default(),
        }
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(&v(&[1.0, 0.0]), 4.0), v(&[1.0, 0.0]));
        let s = saturate(&v(&[3.0, 4.0]), 4.0);
        assert!((s[0] - 2.4).abs() < 1e-15 && (s[1] - 3.2).abs() < 1e-15);
        assert_eq!(saturate(&v(&[0.0, 0.0]), 4.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn interface_control_examples() {
        let d = scalar_design(1.0, 2.0, -0.5, 1.0);
        assert_eq!(interface_control(&d, &v(&[1.0]), &v(&[1.0]), &v(&[3.0])).unwrap()[0], 2.0);
        assert_eq!(interface_control(&d, &v(&[0.7]), &v(&[0.0]), &v(&[0.0])).unwrap()[0], 0.7);
        assert_eq!(interface_control(&d, &v(&[0.0]), &v(&[0.0]), &v(&[4.0])).unwrap()[0], -2.0);
        assert!(interface_control(&d, &v(&[0.0, 1.0]), &v(&[0.0]), &v(&[4.0])).is_err());
    }

    #[test]
    fn lqg_gain_examples() {
        let sys = |a: f64| LinearSystemSpec {
            a: Mat::from_element(1, 1, a),
            b: Mat::from_element(1, 1, 1.0),
            c: Mat::from_element(1, 1, 1.0),
            sigma_w: SymPsd::identity(1),
            sigma_v: SymPsd::identity(1),
            mu0: v(&[0.0]),
        };
        let cfg = UpperControllerCfg {
            kind: crate::model::ControllerKind::Lqg,
            p_q: SymPsd::identity(1),
            p_r: SymPsd::identity(1),
        };
        assert!(lqg_gain(&sys(0.0), &cfg).unwrap()[(0, 0)].abs() < 1e-12);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let k = lqg_gain(&sys(1.0), &cfg).unwrap()[(0, 0)];
        assert!((k - golden / (golden + 1.0)).abs() < 1e-10, "{k}");
    }

    #[test]
    fn moments_single_sample_has_zero_spread() {
        let mut m = Moments::default();
        m.push(&[1.0, 2.0]);
        assert_eq!(m.mean, vec![1.0, 2.0]);
        assert_eq!(m.std(), vec![0.0, 0.0]);
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = stream_rng(1, 0, Stream::Process1).random();
        let b: u64 = stream_rng(1, 0, Stream::Measure1).random();
        let c: u64 = stream_rng(1, 1, Stream::Process1).random();
        let d: u64 = stream_rng(1, 0, Stream::Process1).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, d);
    }
}
