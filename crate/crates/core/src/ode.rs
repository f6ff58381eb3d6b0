//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! Samples are produced by interpolating inside accepted steps, so the step
//! sequence is chosen by the error controller alone and does not depend on the
//! requested sampling grid.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-10, h_max: 0.05, max_steps: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError<E> {
    /// The right-hand side itself failed.
    Rhs(E),
    StepUnderflow {
        t: f64,
        h: f64,
    },
    TooManySteps {
        t: f64,
    },
    NonFinite {
        t: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand–Prince tableau.
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
// Difference between 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Continuous extension (Hairer, Nørsett & Wanner, dopri5 `contd5`).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

type State<const N: usize> = [f64; N];

#[inline]
fn combine<const N: usize>(x: &State<N>, h: f64, terms: &[(f64, &State<N>)]) -> State<N> {
    std::array::from_fn(|i| x[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

fn error_norm<const N: usize>(err: &State<N>, x: &State<N>, xn: &State<N>, opts: &OdeOptions) -> f64 {
    let s: f64 = (0..N)
        .map(|i| {
            let sc = opts.abs_tol + opts.rel_tol * x[i].abs().max(xn[i].abs());
            (err[i] / sc).powi(2)
        })
        .sum();
    (s / N as f64).sqrt()
}

fn scaled_norm<const N: usize>(v: &State<N>, x: &State<N>, opts: &OdeOptions) -> f64 {
    let s: f64 = (0..N).map(|i| (v[i] / (opts.abs_tol + opts.rel_tol * x[i].abs())).powi(2)).sum();
    (s / N as f64).sqrt()
}

/// Integrates `x' = f(t, x)` from `(t0, x0)` and returns the state at each of
/// `sample_times` (ascending, all `>= t0`).
pub fn integrate<const N: usize, E, F>(
    mut f: F,
    t0: f64,
    x0: State<N>,
    sample_times: &[f64],
    opts: &OdeOptions,
) -> Result<(Vec<State<N>>, OdeStats), OdeError<E>>
where
    F: FnMut(f64, &State<N>) -> Result<State<N>, E>,
{
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(sample_times.len());
    let Some(&t_end) = sample_times.last() else {
        return Ok((out, stats));
    };
    let mut next = 0;
    while next < sample_times.len() && sample_times[next] <= t0 {
        out.push(x0);
        next += 1;
    }
    if next == sample_times.len() {
        return Ok((out, stats));
    }

    let mut eval = |t: f64, x: &State<N>, stats: &mut OdeStats| -> Result<State<N>, OdeError<E>> {
        stats.rhs_evals += 1;
        let k = f(t, x).map_err(OdeError::Rhs)?;
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(OdeError::NonFinite { t })
        }
    };

    let mut t = t0;
    let mut x = x0;
    let mut k1 = eval(t, &x, &mut stats)?;

    // Initial step size heuristic.
    let mut h = {
        let d0 = scaled_norm(&x, &x, opts);
        let d1 = scaled_norm(&k1, &x, opts);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let x1 = combine(&x, h0, &[(1.0, &k1)]);
        let f1 = eval(t + h0, &x1, &mut stats)?;
        let diff: State<N> = std::array::from_fn(|i| f1[i] - k1[i]);
        let d2 = scaled_norm(&diff, &x, opts) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(opts.h_max)
    };

    let mut last_rejected = false;
    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps { t });
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(OdeError::StepUnderflow { t, h });
        }
        let h_step = h.min(t_end - t);

        let k2 = eval(t + C2 * h_step, &combine(&x, h_step, &[(A21, &k1)]), &mut stats)?;
        let k3 = eval(t + C3 * h_step, &combine(&x, h_step, &[(A31, &k1), (A32, &k2)]), &mut stats)?;
        let k4 = eval(t + C4 * h_step, &combine(&x, h_step, &[(A41, &k1), (A42, &k2), (A43, &k3)]), &mut stats)?;
        let k5 =
            eval(t + C5 * h_step, &combine(&x, h_step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]), &mut stats)?;
        let k6 = eval(
            t + h_step,
            &combine(&x, h_step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            &mut stats,
        )?;
        let xn = combine(&x, h_step, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = eval(t + h_step, &xn, &mut stats)?;

        let err: State<N> = std::array::from_fn(|i| {
            h_step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
        });
        let en = error_norm(&err, &x, &xn, opts);
        if !en.is_finite() {
            return Err(OdeError::NonFinite { t });
        }

        if en <= 1.0 {
            stats.accepted += 1;
            let t_new = if h_step == t_end - t { t_end } else { t + h_step };

            // Dense output on [t, t_new].
            let mut dense = None;
            while next < sample_times.len() && sample_times[next] <= t_new {
                let ts = sample_times[next];
                if ts == t_new {
                    out.push(xn);
                } else {
                    let r = dense.get_or_insert_with(|| {
                        let ydiff: State<N> = std::array::from_fn(|i| xn[i] - x[i]);
                        let bspl: State<N> = std::array::from_fn(|i| h_step * k1[i] - ydiff[i]);
                        let r4: State<N> = std::array::from_fn(|i| ydiff[i] - h_step * k7[i] - bspl[i]);
                        let r5: State<N> = std::array::from_fn(|i| {
                            h_step * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                        });
                        (ydiff, bspl, r4, r5)
                    });
                    let theta = (ts - t) / h_step;
                    let theta1 = 1.0 - theta;
                    out.push(std::array::from_fn(|i| {
                        x[i] + theta * (r.0[i] + theta1 * (r.1[i] + theta * (r.2[i] + theta1 * r.3[i])))
                    }));
                }
                next += 1;
            }

            t = t_new;
            x = xn;
            k1 = k7;
            let mut fac = (0.9 * en.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h_step * fac).min(opts.h_max);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h = h_step * (0.9 * en.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    Ok((out, stats))
}
