//! Dormand-Prince 5(4) with PI step control and continuous extension.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its continuous extension.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub x0: f64,
    pub x1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 4],
}

impl<const N: usize> DenseStep<N> {
    /// Interpolated state; step endpoints are returned exactly.
    pub fn eval(&self, x: f64) -> [f64; N] {
        if x == self.x0 {
            return self.y0;
        }
        if x == self.x1 {
            return self.y1;
        }
        let h = self.x1 - self.x0;
        let s = (x - self.x0) / h;
        let s1 = 1.0 - s;
        let [r2, r3, r4, r5] = &self.rcont;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = self.y0[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
        }
        out
    }

    pub fn h(&self) -> f64 {
        self.x1 - self.x0
    }
}

/// The right-hand side plus optional admissibility and abort hooks.
pub trait Problem<const N: usize> {
    fn rhs(&self, x: f64, y: &[f64; N]) -> [f64; N];

    /// Extra step rejection criterion (e.g. bounded angular advance).
    fn admissible(&self, _y0: &[f64; N], _y1: &[f64; N]) -> bool {
        true
    }

    /// Fatal condition raised by the right-hand side.
    fn aborted(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Reached `x_end`.
    Completed,
    /// The step callback asked to stop.
    Stopped,
    StepUnderflow,
    MaxSteps,
    Aborted,
}

#[derive(Clone, Debug)]
pub struct RunStats {
    pub outcome: Outcome,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn all_finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

fn error_norm<const N: usize>(
    y0: &[f64; N],
    y1: &[f64; N],
    err: &[f64; N],
    opts: &Options,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sk = opts.abs_tol + opts.rel_tol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / sk;
        acc += e * e;
    }
    (acc / N as f64).sqrt()
}

fn initial_step<const N: usize, P: Problem<N>>(
    p: &P,
    x0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    opts: &Options,
    span: f64,
) -> f64 {
    let sk: Vec<f64> = y0.iter().map(|v| opts.abs_tol + opts.rel_tol * v.abs()).collect();
    let dnf = (0..N).map(|i| (f0[i] / sk[i]).powi(2)).sum::<f64>().sqrt();
    let dny = (0..N).map(|i| (y0[i] / sk[i]).powi(2)).sum::<f64>().sqrt();
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * dny / dnf };
    h = h.min(opts.max_step).min(span);
    let y1 = axpy(y0, h, &[(1.0, f0)]);
    let f1 = p.rhs(x0 + h, &y1);
    let der2 = (0..N).map(|i| ((f1[i] - f0[i]) / sk[i]).powi(2)).sum::<f64>().sqrt() / h;
    let der12 = dnf.max(der2);
    let h1 = if der12 <= 1e-15 || !der12.is_finite() {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(opts.max_step).min(span).max(1e-14 * span.max(1.0))
}

/// Integrate from `x0` to `x_end > x0`. `on_step` sees every accepted step
/// and can end the run early.
pub fn integrate<const N: usize, P, C>(
    p: &P,
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &Options,
    mut on_step: C,
) -> RunStats
where
    P: Problem<N>,
    C: FnMut(&DenseStep<N>) -> Control,
{
    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;
    const BETA: f64 = 0.04;
    const EXPO: f64 = 0.2 - BETA * 0.75;

    let mut stats = RunStats { outcome: Outcome::Completed, accepted: 0, rejected: 0, evaluations: 0 };
    let span = x_end - x0;
    if span <= 0.0 {
        return stats;
    }
    let mut x = x0;
    let mut y = y0;
    let mut k1 = p.rhs(x, &y);
    stats.evaluations += 1;
    if p.aborted() {
        stats.outcome = Outcome::Aborted;
        return stats;
    }
    let mut h = match opts.initial_step {
        Some(h) => h.min(span),
        None => initial_step(p, x, &y, &k1, opts, span),
    };
    stats.evaluations += 1;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        if stats.accepted >= opts.max_steps {
            stats.outcome = Outcome::MaxSteps;
            return stats;
        }
        let remaining = x_end - x;
        let mut last = false;
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
            last = true;
        }
        if h <= 1e-14 * x.abs().max(1.0) * 0.5 || !h.is_finite() {
            stats.outcome = Outcome::StepUnderflow;
            return stats;
        }
        let k2 = p.rhs(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = p.rhs(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = p.rhs(x + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = p.rhs(
            x + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let ysti = axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let xph = if last { x_end } else { x + h };
        let k6 = p.rhs(xph, &ysti);
        let y1 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = p.rhs(xph, &y1);
        stats.evaluations += 6;
        if p.aborted() {
            stats.outcome = Outcome::Aborted;
            return stats;
        }

        let mut err_vec = [0.0; N];
        for i in 0..N {
            err_vec[i] = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let finite = all_finite(&y1) && all_finite(&k7) && all_finite(&err_vec);
        let err = if finite { error_norm(&y, &y1, &err_vec, opts) } else { f64::INFINITY };

        if finite && err <= 1.0 && p.admissible(&y, &y1) {
            let mut rcont = [[0.0; N]; 4];
            for i in 0..N {
                let ydiff = y1[i] - y[i];
                let bspl = h * k1[i] - ydiff;
                rcont[0][i] = ydiff;
                rcont[1][i] = bspl;
                rcont[2][i] = ydiff - h * k7[i] - bspl;
                rcont[3][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let step = DenseStep { x0: x, x1: xph, y0: y, y1, rcont };
            stats.accepted += 1;
            let control = on_step(&step);
            x = xph;
            y = y1;
            k1 = k7;
            if control == Control::Stop {
                stats.outcome = Outcome::Stopped;
                return stats;
            }
            if last {
                stats.outcome = Outcome::Completed;
                return stats;
            }
            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_c.powf(-EXPO) * err_old.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            err_old = err_c;
            h = (h * fac).min(opts.max_step);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = if finite && err.is_finite() && err > 1.0 {
                (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0)
            } else {
                0.25
            };
            h *= fac;
            last_rejected = true;
        }
    }
}
