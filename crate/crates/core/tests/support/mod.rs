use ndarray::{Array1, Array2};
use relerr_core::data::{km_weights, CoefficientVector, InteractionDesign, SurvivalDataset};
use relerr_core::loss::{objective_from_etas, LossKind};
use relerr_core::rng::Stream;

/// A small right-censored draw from the multiplicative model, sorted and
/// ready to fit. Returns the design, the data, the weights and the
/// coefficients that generated the times.
pub fn random_instance(
    seed: u64,
    n: usize,
    q: usize,
    p: usize,
    noise_sd: f64,
) -> (InteractionDesign, SurvivalDataset, Vec<f64>, CoefficientVector) {
    let mut stream = Stream::new(seed);
    let mut truth = CoefficientVector::zeros(q, p);
    for v in truth.values_mut().iter_mut() {
        *v = stream.uniform(-0.8, 0.8);
    }
    let env = Array2::from_shape_fn((n, q), |_| stream.normal());
    let genes = Array2::from_shape_fn((n, p), |_| stream.normal());
    let mut times = Vec::with_capacity(n);
    let mut status = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = 0.0;
        let mut col = 0;
        for j in 0..q {
            eta += env[[i, j]] * truth.values()[col];
            col += 1;
        }
        for k in 0..p {
            eta += genes[[i, k]] * truth.values()[col];
            col += 1;
        }
        for j in 0..q {
            for k in 0..p {
                eta += env[[i, j]] * genes[[i, k]] * truth.values()[col];
                col += 1;
            }
        }
        let t = (eta + noise_sd * stream.normal()).exp();
        let c = stream.uniform(0.0, 4.0 * t.max(1.0));
        times.push(t.min(c));
        status.push(u8::from(t <= c));
    }
    let data = SurvivalDataset::new(times, status, env, genes)
        .expect("generated rows are consistent")
        .sort_by_time();
    let design = InteractionDesign::from_dataset(&data).expect("dimensions agree");
    let weights = km_weights(data.status()).expect("sorted with valid status");
    (design, data, weights, truth)
}

/// Weighted unpenalized objective at `theta`.
pub fn objective_at(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
    theta: &Array1<f64>,
) -> f64 {
    let etas = design.matrix().dot(theta);
    objective_from_etas(kind, etas.view(), data.times(), weights)
}

/// Global minimum of the unpenalized objective, found without any of the
/// fitting machinery.
///
/// Every loss here is convex in the coefficients (each term is a convex
/// function of a censored residual that is linear in theta), so the basin
/// is unique. A single coarse product grid over [-4, 4] per axis brackets
/// it, and Nelder-Mead polishes the best grid points down to machine-level
/// objective accuracy. The simplex method only ever calls [`objective_at`],
/// which keeps the answer independent of the solver under test.
pub fn brute_force_min(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
) -> f64 {
    let d = design.d();
    assert!(d <= 6, "product grids above six axes are too slow");
    let eval = |theta: &Array1<f64>| objective_at(design, data, weights, kind, theta);
    let pts = 7usize;
    let mut starts: Vec<(f64, Array1<f64>)> = Vec::new();
    let mut idx = vec![0usize; d];
    let mut theta = Array1::zeros(d);
    loop {
        for (a, &t) in idx.iter().enumerate() {
            theta[a] = -4.0 + 8.0 * t as f64 / (pts - 1) as f64;
        }
        starts.push((eval(&theta), theta.clone()));
        starts.sort_by(|a, b| a.0.total_cmp(&b.0));
        starts.truncate(3);
        let mut axis = 0;
        loop {
            if axis == d {
                break;
            }
            idx[axis] += 1;
            if idx[axis] < pts {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
        if axis == d {
            break;
        }
    }
    if let Some(vertex) = best_interpolating_vertex(design, data, weights, kind) {
        starts.insert(0, vertex);
    }
    let mut best = f64::INFINITY;
    for (_, start) in starts {
        let mut x = start;
        // Minima of these losses often sit where several residuals vanish at
        // once, and a single simplex tends to collapse early against such
        // edges. Restarting from the collapsed point with progressively
        // smaller simplexes, until a whole cycle stops paying, digs the last
        // few digits out.
        for _ in 0..4 {
            let before = best;
            for step in [0.5, 2e-2, 5e-4] {
                let (val, polished) = nelder_mead(&eval, &x, step);
                x = polished;
                best = best.min(val);
            }
            if before - best <= 1e-12 * best.abs().max(1.0) {
                break;
            }
        }
    }
    best
}

/// The best coefficient vector that drives `d` weighted residuals to zero at
/// once, found by trying every such subset of observations. Minima of the
/// absolute-residual losses sit on or next to these interpolation vertices,
/// where simplex search is at its weakest, so the winner both competes on
/// its own value and seeds the simplex phase.
fn best_interpolating_vertex(
    design: &InteractionDesign,
    data: &SurvivalDataset,
    weights: &[f64],
    kind: LossKind,
) -> Option<(f64, Array1<f64>)> {
    let u = design.matrix();
    let d = u.ncols();
    let rows: Vec<usize> = (0..data.n()).filter(|&i| weights[i] > 0.0).collect();
    if rows.len() < d {
        return None;
    }
    let mut count = 1.0f64;
    for k in 0..d {
        count *= (rows.len() - k) as f64 / (k + 1) as f64;
    }
    if count > 700_000.0 {
        return None;
    }
    let mut best: Option<(f64, Array1<f64>)> = None;
    let mut comb: Vec<usize> = (0..d).collect();
    loop {
        let a = Array2::from_shape_fn((d, d), |(k, j)| u[[rows[comb[k]], j]]);
        let b = Array1::from_shape_fn(d, |k| data.times()[rows[comb[k]]].ln());
        if let Some(theta) = gauss_solve(a, b) {
            let val = objective_at(design, data, weights, kind, &theta);
            if val.is_finite() && best.as_ref().map_or(true, |(v, _)| val < *v) {
                best = Some((val, theta));
            }
        }
        let mut i = d;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if comb[i] < rows.len() - d + i {
                comb[i] += 1;
                for k in (i + 1)..d {
                    comb[k] = comb[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Gaussian elimination with partial pivoting, sized for the tiny vertex
/// systems above.
fn gauss_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let floor = 1e-10 * (1.0 + a.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())));
    for col in 0..n {
        let mut piv = col;
        for row in (col + 1)..n {
            if a[[row, col]].abs() > a[[piv, col]].abs() {
                piv = row;
            }
        }
        if a[[piv, col]].abs() < floor {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for row in (col + 1)..n {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..n {
                a[[row, k]] -= f * a[[col, k]];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in (col + 1)..n {
            v -= a[[col, k]] * x[k];
        }
        x[col] = v / a[[col, col]];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Standard Nelder-Mead with reflection, expansion, contraction, and
/// shrinking, stopping once the simplex collapses in both value spread and
/// diameter. Restarting it from its own answer with a much smaller initial
/// step (as [`brute_force_min`] does) unsticks degenerate simplexes.
fn nelder_mead(
    eval: &dyn Fn(&Array1<f64>) -> f64,
    start: &Array1<f64>,
    step: f64,
) -> (f64, Array1<f64>) {
    let d = start.len();
    let mut simplex: Vec<(f64, Array1<f64>)> = Vec::with_capacity(d + 1);
    simplex.push((eval(start), start.clone()));
    for j in 0..d {
        let mut x = start.clone();
        x[j] += step;
        simplex.push((eval(&x), x));
    }
    for _ in 0..4000 {
        simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
        let spread = simplex[d].0 - simplex[0].0;
        let anchor = simplex[0].1.clone();
        let diameter = simplex
            .iter()
            .flat_map(|(_, x)| x.iter().zip(&anchor).map(|(&a, &b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-13 * simplex[0].0.abs().max(1.0) && diameter <= 1e-9 {
            break;
        }
        let mut centroid = Array1::<f64>::zeros(d);
        for (_, x) in &simplex[..d] {
            centroid += x;
        }
        centroid /= d as f64;
        let worst = simplex[d].clone();
        let away = &centroid - &worst.1;
        let reflected = &centroid + &away;
        let fr = eval(&reflected);
        if fr < simplex[0].0 {
            let expanded = &centroid + &(&away * 2.0);
            let fe = eval(&expanded);
            simplex[d] = if fe < fr { (fe, expanded) } else { (fr, reflected) };
        } else if fr < simplex[d - 1].0 {
            simplex[d] = (fr, reflected);
        } else {
            let inside = fr >= worst.0;
            let contracted = if inside {
                &centroid - &(&away * 0.5)
            } else {
                &centroid + &(&away * 0.5)
            };
            let fc = eval(&contracted);
            if fc < if inside { worst.0 } else { fr } {
                simplex[d] = (fc, contracted);
            } else {
                for entry in simplex.iter_mut().skip(1) {
                    let x = &anchor + &((&entry.1 - &anchor) * 0.5);
                    *entry = (eval(&x), x);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (val, x) = simplex.swap_remove(0);
    (val, x)
}

/// Whether every interaction in the support has both parent main effects
/// in the support.
pub fn satisfies_strong_hierarchy(theta: &CoefficientVector) -> bool {
    use relerr_core::data::Coordinate;
    let support = theta.support();
    support.iter().all(|&idx| match theta.coordinate(idx) {
        Coordinate::Interaction { env, gene } => {
            theta.get(Coordinate::Env(env)).is_some_and(|v| v != 0.0)
                && theta.get(Coordinate::Gene(gene)).is_some_and(|v| v != 0.0)
        }
        _ => true,
    })
}
