//! Rate functions and samplers of the forest model: the zone-of-influence
//! competition kernel, birth and death rates, Richards growth and seed
//! dispersal.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::lens_area;
use crate::model::{DispersalMode, Individual, KernelMode, ModelParams, Population, Position};

/// Competition pressure exerted by `y` on `x`. Self-interaction is excluded
/// by identity, so two distinct individuals with equal states still compete.
pub fn competition_u(x: &Individual, y: &Individual, params: &ModelParams) -> f64 {
    if x.id == y.id {
        return 0.0;
    }
    match params.kernel {
        KernelMode::Zoi => {
            let d = params.domain().distance(x.p, y.p);
            zoi_u(x.r, y.r, d, params.u_max)
        }
        KernelMode::Constant(c) => c,
        KernelMode::None => 0.0,
    }
}

/// `u_max * Area(D_x ∩ D_y) / Area(D_x)` for disks at distance `d`.
pub fn zoi_u(rx: f64, ry: f64, d: f64, u_max: f64) -> f64 {
    if d >= rx + ry {
        return 0.0;
    }
    (u_max * lens_area(rx, ry, d) / (PI * rx * rx)).min(u_max)
}

/// Total competition rate `λ^c(x, ν) = Σ_y u(x, y)` using the spatial grid.
///
/// Contributions are accumulated in increasing id order, so the result is
/// bit-identical to [`lambda_c_brute`].
pub fn lambda_c(x: &Individual, pop: &Population, params: &ModelParams) -> f64 {
    match params.kernel {
        KernelMode::Zoi => {
            let domain = params.domain();
            // Overlaps are few; keep them on the stack unless there are many.
            let mut small = [(0u64, 0.0f64); 16];
            let mut len = 0;
            let mut spill: Vec<(u64, f64)> = Vec::new();
            let grid = pop.grid();
            let reach = x.r + params.r_max;
            let (cells, n) = grid.neighborhood_cells(x.p);
            for &c in &cells[..n] {
                for (&id, &q) in grid.cell_members(c).iter().zip(grid.cell_positions(c)) {
                    if id == x.id {
                        continue;
                    }
                    let d2 = domain.delta(x.p, q).norm2();
                    if d2 >= reach * reach {
                        continue;
                    }
                    let y = pop.get(id).expect("grid and index out of sync");
                    let u = zoi_u(x.r, y.r, d2.sqrt(), params.u_max);
                    if u > 0.0 {
                        if len < small.len() {
                            small[len] = (id, u);
                            len += 1;
                        } else {
                            spill.push((id, u));
                        }
                    }
                }
            }
            let terms = if spill.is_empty() {
                &mut small[..len]
            } else {
                spill.extend_from_slice(&small[..len]);
                &mut spill[..]
            };
            terms.sort_unstable_by_key(|t| t.0);
            terms.iter().map(|t| t.1).sum()
        }
        KernelMode::Constant(c) => {
            let others = pop.len() - usize::from(pop.get(x.id).is_some());
            c * others as f64
        }
        KernelMode::None => 0.0,
    }
}

/// Reference `O(N)` evaluation of [`lambda_c`].
pub fn lambda_c_brute(x: &Individual, pop: &Population, params: &ModelParams) -> f64 {
    let mut terms: Vec<(u64, f64)> = pop
        .individuals()
        .iter()
        .map(|y| (y.id, competition_u(x, y, params)))
        .filter(|t| t.1 > 0.0)
        .collect();
    terms.sort_unstable_by_key(|t| t.0);
    terms.iter().map(|t| t.1).sum()
}

/// `λ^c` for every individual, in storage order.
pub fn lambda_c_all(pop: &Population, params: &ModelParams) -> Vec<f64> {
    match params.kernel {
        KernelMode::Zoi => pop
            .individuals()
            .iter()
            .map(|x| lambda_c(x, pop, params))
            .collect(),
        KernelMode::Constant(c) => {
            vec![c * pop.len().saturating_sub(1) as f64; pop.len()]
        }
        KernelMode::None => vec![0.0; pop.len()],
    }
}

/// `λ^b_max (r / r_max) 1{r >= r_b}`.
pub fn birth_rate(x: &Individual, params: &ModelParams) -> f64 {
    birth_rate_r(x.r, params)
}

pub fn birth_rate_r(r: f64, params: &ModelParams) -> f64 {
    if r < params.r_birth {
        0.0
    } else {
        (params.lambda_b_max * r / params.r_max).min(params.lambda_b_max)
    }
}

/// Natural death rate; constant in the forest model.
pub fn death_rate(_x: &Individual, params: &ModelParams) -> f64 {
    params.lambda_d
}

/// Richards growth speed `α/(1-β) r [(r/r_max)^(β-1) - 1]`.
pub fn richards_r(r: f64, params: &ModelParams) -> f64 {
    let b = params.beta_g;
    params.alpha_g_max / (1.0 - b) * r * ((r / params.r_max).powf(b - 1.0) - 1.0)
}

/// Growth reduction factor `[1 - C_g λ^c]^+` for a given competition rate.
pub fn psi_of(lambda_c: f64, params: &ModelParams) -> f64 {
    (1.0 - params.c_g * lambda_c).clamp(0.0, 1.0)
}

pub fn psi(x: &Individual, pop: &Population, params: &ModelParams) -> f64 {
    psi_of(lambda_c(x, pop, params), params)
}

/// Radial drift `ψ R(r)`; positions have no drift.
pub fn growth_drift(x: &Individual, pop: &Population, params: &ModelParams) -> f64 {
    psi(x, pop, params) * richards_r(x.r, params)
}

/// Isotropic Gaussian offset; draws the x component first.
pub fn sample_offset<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> [f64; 2] {
    let gx: f64 = rng.sample(StandardNormal);
    let gy: f64 = rng.sample(StandardNormal);
    [sigma * gx, sigma * gy]
}

/// Candidate offspring state of parent `x`: Gaussian offset and radius
/// `r_min`. On the torus the position is wrapped; on the island it is the
/// raw position and may lie outside the parcel (the seed is lost).
pub fn sample_dispersal<R: Rng + ?Sized>(
    x: &Individual,
    params: &ModelParams,
    rng: &mut R,
) -> (Position, f64) {
    let off = sample_offset(params.sigma_disp, rng);
    (params.domain().translate(x.p, off), params.r_min)
}

/// Offspring state on the island conditioned on landing inside the parcel,
/// by rejection. Gives up after `max_tries` draws.
pub fn sample_dispersal_truncated<R: Rng + ?Sized>(
    x: &Individual,
    params: &ModelParams,
    rng: &mut R,
    max_tries: usize,
) -> Option<(Position, f64)> {
    let domain = params.domain();
    for _ in 0..max_tries {
        let (p, r) = sample_dispersal(x, params, rng);
        if domain.contains(p) {
            return Some((p, r));
        }
    }
    None
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Points farther than this many dispersal deviations from every edge are
/// treated as interior.
pub const ISLAND_MARGIN_SIGMAS: f64 = 6.0;

fn axis_mass(x: f64, side: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if (0.0..=side).contains(&x) { 1.0 } else { 0.0 };
    }
    let m = ISLAND_MARGIN_SIGMAS * sigma;
    if x >= m && x <= side - m {
        return 1.0;
    }
    norm_cdf((side - x) / sigma) - norm_cdf(-x / sigma)
}

/// Gaussian dispersal mass that stays inside the parcel from `p`.
pub fn island_mass(p: Position, params: &ModelParams) -> f64 {
    axis_mass(p[0], params.side, params.sigma_disp) * axis_mass(p[1], params.side, params.sigma_disp)
}

/// Island normalization `C_x`, the reciprocal of [`island_mass`].
/// Equals 1 in parcel-in-forest mode.
pub fn island_cx(p: Position, params: &ModelParams) -> f64 {
    match params.dispersal {
        DispersalMode::ParcelInForest => 1.0,
        DispersalMode::Island => 1.0 / island_mass(p, params),
    }
}

/// Tabulated [`island_cx`] with linear interpolation.
///
/// `C_x` is a product of two per-axis factors, and each factor differs from 1
/// only within the margin of an edge, so one 1-D table of
/// [`IslandNormalizer::NODES`] nodes over `[0, min(margin, L/2)]`, mirrored
/// at the far edge, replaces a 2-D grid of the same resolution per axis.
#[derive(Debug, Clone)]
pub struct IslandNormalizer {
    side: f64,
    span: f64,
    inv_mass: Vec<f64>,
}

impl IslandNormalizer {
    pub const NODES: usize = 256;

    pub fn new(params: &ModelParams) -> Self {
        let n = Self::NODES;
        let span = (ISLAND_MARGIN_SIGMAS * params.sigma_disp)
            .min(0.5 * params.side)
            .max(f64::MIN_POSITIVE);
        let h = span / (n - 1) as f64;
        let inv_mass = (0..n)
            .map(|i| 1.0 / axis_mass(i as f64 * h, params.side, params.sigma_disp))
            .collect();
        IslandNormalizer {
            side: params.side,
            span,
            inv_mass,
        }
    }

    fn axis(&self, x: f64) -> f64 {
        let n = Self::NODES;
        let x = x.clamp(0.0, self.side);
        let e = x.min(self.side - x);
        if e >= self.span {
            return self.inv_mass[n - 1];
        }
        let s = e / self.span * (n - 1) as f64;
        let i = (s.floor() as usize).min(n - 2);
        let t = s - i as f64;
        (1.0 - t) * self.inv_mass[i] + t * self.inv_mass[i + 1]
    }

    /// Interpolated `C_x`.
    pub fn cx(&self, p: Position) -> f64 {
        self.axis(p[0]) * self.axis(p[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn params() -> ModelParams {
        ModelParams {
            u_max: 2.0,
            lambda_b_max: 2.0,
            r_max: 1.0,
            r_birth: 0.3,
            r_min: 0.1,
            side: 10.0,
            ..ModelParams::forest_default()
        }
    }

    fn ind(id: u64, p: Position, r: f64) -> Individual {
        Individual { id, p, r }
    }

    #[test]
    fn self_competition_is_zero() {
        let p = params();
        let x = ind(1, [5.0, 5.0], 0.5);
        assert_eq!(competition_u(&x, &x, &p), 0.0);
        // Same state, different identity: full overlap.
        let y = Individual { id: 2, ..x };
        assert!((competition_u(&x, &y, &p) - p.u_max).abs() < 1e-12);
    }

    #[test]
    fn zoi_kernel_examples() {
        let p = params();
        let x = ind(1, [5.0, 5.0], 1.0);
        let far = ind(2, [7.0, 5.0], 1.0);
        assert_eq!(competition_u(&x, &far, &p), 0.0);
        let y = ind(3, [6.0, 5.0], 1.0);
        assert!((competition_u(&x, &y, &p) - 0.782005).abs() < 1e-6);
        // Across the seam.
        let a = ind(4, [0.2, 5.0], 1.0);
        let b = ind(5, [9.2, 5.0], 1.0);
        assert!((competition_u(&a, &b, &p) - 0.782005).abs() < 1e-6);
    }

    #[test]
    fn lambda_c_additive() {
        let p = params();
        let single = Population::new(&[([5.0, 5.0], 1.0)], &p).unwrap();
        assert_eq!(lambda_c(single.at(0), &single, &p), 0.0);
        let pair = Population::new(&[([5.0, 5.0], 1.0), ([6.0, 5.0], 1.0)], &p).unwrap();
        let one = lambda_c(pair.at(0), &pair, &p);
        let triple = Population::new(
            &[([5.0, 5.0], 1.0), ([6.0, 5.0], 1.0), ([4.0, 5.0], 1.0)],
            &p,
        )
        .unwrap();
        let two = lambda_c(triple.at(0), &triple, &p);
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn constant_kernel_counts_others() {
        let p = ModelParams {
            kernel: KernelMode::Constant(0.5),
            ..params()
        };
        let pop = Population::new(&[([1.0, 1.0], 0.5), ([8.0, 8.0], 0.5), ([3.0, 2.0], 0.5)], &p)
            .unwrap();
        assert_eq!(lambda_c(pop.at(0), &pop, &p), 1.0);
        let outsider = ind(99, [0.0, 0.0], 0.5);
        assert_eq!(lambda_c(&outsider, &pop, &p), 1.5);
        assert_eq!(lambda_c_all(&pop, &p), vec![1.0; 3]);
    }

    #[test]
    fn birth_rate_examples() {
        let p = params();
        assert_eq!(birth_rate(&ind(1, [0.0, 0.0], 0.2), &p), 0.0);
        assert_eq!(birth_rate(&ind(1, [0.0, 0.0], 1.0), &p), 2.0);
        assert!((birth_rate(&ind(1, [0.0, 0.0], 0.5), &p) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn richards_examples() {
        let p = ModelParams {
            alpha_g_max: 1.0,
            beta_g: 2.0,
            r_max: 1.0,
            ..params()
        };
        assert_eq!(richards_r(1.0, &p), 0.0);
        assert!((richards_r(0.5, &p) - 0.25).abs() < 1e-15);
        let q = ModelParams { beta_g: 0.5, ..p.clone() };
        assert!(richards_r(0.5, &q) > 0.0);
    }

    #[test]
    fn psi_examples() {
        let p = ModelParams { c_g: 0.5, ..params() };
        assert_eq!(psi_of(0.0, &p), 1.0);
        assert_eq!(psi_of(1.0, &p), 0.5);
        assert_eq!(psi_of(2.0, &p), 0.0);
        assert_eq!(psi_of(10.0, &p), 0.0);
    }

    #[test]
    fn degenerate_dispersal() {
        let p = ModelParams { sigma_disp: 0.0, ..params() };
        let x = ind(1, [3.0, 4.0], 0.5);
        let mut rng = replica_rng(1, 0);
        let (q, r) = sample_dispersal(&x, &p, &mut rng);
        assert_eq!(q, x.p);
        assert_eq!(r, p.r_min);
    }

    #[test]
    fn wrapped_offsets_are_centered() {
        let p = ModelParams { sigma_disp: 0.8, ..params() };
        let x = ind(1, [0.1, 9.9], 0.5);
        let mut rng = replica_rng(5, 0);
        let n = 100_000;
        let domain = p.domain();
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let (q, r) = sample_dispersal(&x, &p, &mut rng);
            assert_eq!(r, p.r_min);
            assert!(domain.contains(q));
            let d = domain.delta(x.p, q);
            sx += d.dx;
            sy += d.dy;
        }
        let se = p.sigma_disp / (n as f64).sqrt();
        assert!((sx / n as f64).abs() < 3.0 * se);
        assert!((sy / n as f64).abs() < 3.0 * se);
    }

    #[test]
    fn island_normalization() {
        let p = ModelParams {
            dispersal: DispersalMode::Island,
            sigma_disp: 0.3,
            ..params()
        };
        assert!((island_cx([5.0, 5.0], &p) - 1.0).abs() < 1e-12);
        assert!((island_cx([0.0, 0.0], &p) - 4.0).abs() < 1e-9);
        assert!((island_cx([5.0, 0.0], &p) - 2.0).abs() < 1e-9);
        let cache = IslandNormalizer::new(&p);
        for q in [[0.0, 0.0], [5.0, 0.0], [0.13, 7.7], [9.99, 0.4], [3.3, 3.3]] {
            let exact = island_cx(q, &p);
            assert!((cache.cx(q) - exact).abs() < 1e-3 * exact, "{q:?}");
        }
        assert!(island_cx([0.0, 0.0], &ModelParams::forest_default()) == 1.0);
    }

    #[test]
    fn island_mass_against_quadrature() {
        // 2-D midpoint rule of the Gaussian density over the parcel.
        let p = ModelParams {
            dispersal: DispersalMode::Island,
            sigma_disp: 0.5,
            ..params()
        };
        let s = p.sigma_disp;
        for q in [[0.0, 0.0], [5.0, 0.0], [0.4, 1.1]] {
            let n = 400;
            let h = 8.0 * s / n as f64;
            let mut mass = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let x = q[0] - 4.0 * s + (i as f64 + 0.5) * h;
                    let y = q[1] - 4.0 * s + (j as f64 + 0.5) * h;
                    if (0.0..=p.side).contains(&x) && (0.0..=p.side).contains(&y) {
                        let r2 = (x - q[0]).powi(2) + (y - q[1]).powi(2);
                        mass += (-r2 / (2.0 * s * s)).exp() * h * h / (2.0 * PI * s * s);
                    }
                }
            }
            assert!((mass - island_mass(q, &p)).abs() < 2e-3, "{q:?}");
        }
    }
}
