//! Correlation criterion, solver cache and the closed-form Gauss-Newton step.
//!
//! The objective is the squared distance between the L2-normalized warped
//! template and model vectors. Its linearization around the current state has
//! an analytic minimizer; the quantities it needs (the Gram matrix `C = JᵀJ`,
//! the template projection `p_t = Jᵀ t` and `‖t‖²`) are maintained here either
//! by full recomputation or by add/subtract updates over the handful of
//! jacobian rows a single event can touch.

use thiserror::Error;

use crate::density::{DensityMap, GradientField, SplatFootprint};
use crate::mat::{
    add3, dot3, mat3_add_outer, mat3_condition, mat3_inverse, mat3_mul_vec, scale3, sub3, Mat3,
    Vec3, ZERO3, ZERO_MAT3,
};
use crate::warp::{warp_from_template, warp_jacobian, warp_to_template, FeatureState};
use crate::window::ModelWindow;

/// Gram matrices with a Frobenius condition estimate at or above this are
/// treated as numerically singular.
pub const CONDITION_LIMIT: f64 = 1e8;
/// Relative floor on `‖t‖² - p_tᵀ C⁻¹ p_t`; below it the template lies in the
/// jacobian column span and the step is undefined.
pub const SPAN_RESIDUAL_REL: f64 = 1e-9;
/// Absolute floor on the step-scale denominator.
pub const LAMBDA_DENOM_MIN: f64 = 1e-12;

/// Maximum number of gradient pixels a single density update can perturb.
pub const MAX_GRADIENT_CHANGES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SolverError {
    #[error("window vector has zero norm")]
    DegenerateWindow,
    #[error("gram matrix is ill-conditioned (cond ~ {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("template lies in the jacobian column span (residual {residual:.3e})")]
    TemplateInSpan { residual: f64 },
    #[error("step scale denominator ~ 0 ({denominator:.3e})")]
    DegenerateLambda { denominator: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("change set references pixels outside the template support")]
pub struct StaleChangeSet;

/// Squared distance between the normalized vectors, `‖t̂ - m̂‖²`.
/// Equals `2(1 - rho)` with `rho` the normalized correlation; invariant to
/// positive scaling of either argument.
pub fn ecc_cost(t: &[f64], m: &[f64]) -> Result<f64, SolverError> {
    assert_eq!(t.len(), m.len(), "vector lengths must match");
    let t_norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let m_norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t_norm == 0.0 || m_norm == 0.0 {
        return Err(SolverError::DegenerateWindow);
    }
    let mut acc = 0.0;
    for (a, b) in t.iter().zip(m) {
        let d = a / t_norm - b / m_norm;
        acc += d * d;
    }
    Ok(acc)
}

/// Pixels touched by one template density update: the densities themselves
/// (at most 4) and the gradient pixels they perturb (at most 12).
#[derive(Debug, Clone, Copy)]
pub struct ChangeSet {
    density: [[i32; 2]; 4],
    n_density: usize,
    gradient: [[i32; 2]; MAX_GRADIENT_CHANGES],
    n_gradient: usize,
}

impl ChangeSet {
    pub fn empty() -> Self {
        Self {
            density: [[0; 2]; 4],
            n_density: 0,
            gradient: [[0; 2]; MAX_GRADIENT_CHANGES],
            n_gradient: 0,
        }
    }

    /// Derive the change set for a splat that has just been applied to the
    /// template. Panics if the gradient set ever exceeds its 12-pixel bound,
    /// which the four-pixel splat footprint makes impossible.
    pub fn from_splat(footprint: &SplatFootprint, grads: &GradientField) -> Self {
        let mut set = Self::empty();
        for &px in footprint.pixels() {
            set.density[set.n_density] = px;
            set.n_density += 1;
            grads.visit_dependents(px, |q| {
                if !set.gradient[..set.n_gradient].contains(&q) {
                    assert!(
                        set.n_gradient < MAX_GRADIENT_CHANGES,
                        "gradient change set exceeded the {MAX_GRADIENT_CHANGES}-pixel bound"
                    );
                    set.gradient[set.n_gradient] = q;
                    set.n_gradient += 1;
                }
            });
        }
        set
    }

    pub fn density_pixels(&self) -> &[[i32; 2]] {
        &self.density[..self.n_density]
    }

    pub fn gradient_pixels(&self) -> &[[i32; 2]] {
        &self.gradient[..self.n_gradient]
    }

    pub fn is_empty(&self) -> bool {
        self.n_density == 0
    }
}

/// One jacobian row per model pixel: the template gradient sampled at the
/// pixel's warped position, chained with the warp derivative. Rows of model
/// pixels holding no density are zero (their warped-template entries are
/// frozen).
pub fn build_jacobian(
    grads: &GradientField,
    state: &FeatureState,
    model: &ModelWindow,
) -> Vec<Vec3> {
    let len = model.side() * model.side();
    let mut rows = vec![ZERO3; len];
    for idx in 0..len {
        if !model.is_active(idx) {
            continue;
        }
        let global = model.global_of(idx);
        let xp = warp_to_template(global, state);
        let (gx, gy) = grads.sample(xp);
        let w = warp_jacobian(global, state);
        rows[idx] = [
            gx * w[0][0] + gy * w[1][0],
            gx * w[0][1] + gy * w[1][1],
            gx * w[0][2] + gy * w[1][2],
        ];
    }
    rows
}

/// Recompute the solver quantities from stored rows: `C = JᵀJ`, `p_t = Jᵀt`,
/// `‖t‖²`.
pub fn cache_products(rows: &[Vec3], warped: &[f64]) -> (Mat3, Vec3, f64) {
    assert_eq!(rows.len(), warped.len());
    let mut c = ZERO_MAT3;
    let mut p_t = ZERO3;
    let mut t_norm_sq = 0.0;
    for (row, &t) in rows.iter().zip(warped) {
        mat3_add_outer(&mut c, *row, 1.0);
        p_t = add3(p_t, scale3(*row, t));
        t_norm_sq += t * t;
    }
    (c, p_t, t_norm_sq)
}

/// Closed-form step result: the optimal state perturbation, its scale factor
/// and the template/model correlation.
#[derive(Debug, Clone, Copy)]
pub struct StepSolution {
    pub delta: Vec3,
    pub lambda: f64,
    pub rho: f64,
}

/// Scratch vectors for the non-incremental solve route, reused across events.
#[derive(Debug, Default, Clone)]
pub struct FullSolveScratch {
    m_hat: Vec<f64>,
    residual: Vec<f64>,
    pinv_cols: Vec<Vec3>,
}

struct GuardedSolve {
    q_t: Vec3,
    q_m: Vec3,
    lambda: f64,
}

/// State trigonometry hoisted out of per-row loops: one `sin_cos` per batch
/// instead of two per row.
struct FrozenWarp {
    sin: f64,
    cos: f64,
    x: f64,
    y: f64,
}

impl FrozenWarp {
    fn new(state: &FeatureState) -> Self {
        let (sin, cos) = state.theta.sin_cos();
        Self { sin, cos, x: state.x, y: state.y }
    }

    #[inline]
    fn to_template(&self, g: [f64; 2]) -> [f64; 2] {
        let dx = g[0] - self.x;
        let dy = g[1] - self.y;
        [self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy]
    }

    /// Rows of the 2x3 warp derivative, as in [`warp_jacobian`].
    #[inline]
    fn jacobian(&self, g: [f64; 2]) -> [[f64; 3]; 2] {
        let dx = g[0] - self.x;
        let dy = g[1] - self.y;
        [
            [-self.cos, -self.sin, -self.sin * dx + self.cos * dy],
            [self.sin, -self.cos, -self.cos * dx - self.sin * dy],
        ]
    }
}

/// One-pass bilinear gather of the template density and both gradient
/// components at a warped position; zero outside the support.
#[inline]
fn sample_template_and_gradient(
    template: &DensityMap,
    grads: &GradientField,
    x: [f64; 2],
) -> (f64, f64, f64) {
    let (base, weights) = crate::density::bilinear_weights(x);
    let r = template.radius() as i64;
    let (mut t, mut gx, mut gy) = (0.0, 0.0, 0.0);
    for (k, offset) in crate::density::NEIGHBORHOOD.iter().enumerate() {
        let w = weights[k];
        if w == 0.0 {
            continue;
        }
        let px = [base[0] + offset[0], base[1] + offset[1]];
        if px[0].abs() > r || px[1].abs() > r {
            continue;
        }
        let idx = template.index_of([px[0] as i32, px[1] as i32]);
        t += w * template.values()[idx];
        gx += w * grads.gx_values()[idx];
        gy += w * grads.gy_values()[idx];
    }
    (t, gx, gy)
}

/// Shared well-posedness guards and scale factor for the closed-form step.
/// `q_t = C⁻¹p_t`, `q_m = C⁻¹p_m̂`.
fn solve_guarded(
    c: &Mat3,
    p_t: Vec3,
    t_norm_sq: f64,
    p_m: Vec3,
    rho: f64,
) -> Result<GuardedSolve, SolverError> {
    let c_inv = mat3_inverse(c).ok_or(SolverError::IllConditioned { cond: f64::INFINITY })?;
    let cond = mat3_condition(c);
    if !cond.is_finite() || cond >= CONDITION_LIMIT {
        return Err(SolverError::IllConditioned { cond });
    }
    let q_t = mat3_mul_vec(&c_inv, p_t);
    let residual = t_norm_sq - dot3(p_t, q_t);
    if residual <= SPAN_RESIDUAL_REL * t_norm_sq {
        return Err(SolverError::TemplateInSpan { residual });
    }
    let q_m = mat3_mul_vec(&c_inv, p_m);
    let denominator = t_norm_sq.sqrt() * rho - dot3(p_t, q_m);
    if denominator.abs() < LAMBDA_DENOM_MIN {
        return Err(SolverError::DegenerateLambda { denominator });
    }
    Ok(GuardedSolve {
        q_t,
        q_m,
        lambda: residual / denominator,
    })
}

/// Solver cache: the warped-template vector, the jacobian rows, the template
/// gradient maps and the derived quantities used by the closed-form step.
///
/// Rows and warped-template entries follow the freeze convention of the
/// per-event scheme: between full rebuilds, only rows whose sampling
/// footprint intersects a change set are re-evaluated (at the freshest
/// state); all other rows keep their stored values. The derived quantities
/// always equal their from-scratch recomputation from the stored rows.
#[derive(Debug, Clone)]
pub struct EccCache {
    radius: i32,
    side: usize,
    center: [i32; 2],
    rows: Vec<Vec3>,
    warped: Vec<f64>,
    grads: GradientField,
    c: Mat3,
    p_t: Vec3,
    t_norm_sq: f64,
    sweep_cursor: usize,
}

impl EccCache {
    /// Full build: fresh gradients, fresh warped-template samples for every
    /// model pixel, fresh jacobian rows for every active pixel, and the
    /// derived quantities computed from scratch.
    pub fn build(template: &DensityMap, state: &FeatureState, model: &ModelWindow) -> Self {
        let radius = model.radius();
        let side = model.side();
        let mut cache = Self {
            radius,
            side,
            center: model.center(),
            rows: Vec::new(),
            warped: vec![0.0; side * side],
            grads: GradientField::zeros(radius),
            c: ZERO_MAT3,
            p_t: ZERO3,
            t_norm_sq: 0.0,
            sweep_cursor: 0,
        };
        cache.rebuild(template, state, model);
        cache
    }

    /// Low-level constructor from raw rows and warped-template entries, for
    /// solver tests and benchmarks. Gradients are left zeroed.
    pub fn from_parts(radius: i32, center: [i32; 2], rows: Vec<Vec3>, warped: Vec<f64>) -> Self {
        let side = (2 * radius + 1) as usize;
        assert_eq!(rows.len(), side * side);
        assert_eq!(warped.len(), side * side);
        let (c, p_t, t_norm_sq) = cache_products(&rows, &warped);
        Self {
            radius,
            side,
            center,
            rows,
            warped,
            grads: GradientField::zeros(radius),
            c,
            p_t,
            t_norm_sq,
            sweep_cursor: 0,
        }
    }

    /// Rebuild everything in place (drift guard / window recenter path).
    pub fn rebuild(&mut self, template: &DensityMap, state: &FeatureState, model: &ModelWindow) {
        self.center = model.center();
        self.grads = template.gradient();
        let len = self.side * self.side;
        self.warped.resize(len, 0.0);
        for idx in 0..len {
            let xp = warp_to_template(model.global_of(idx), state);
            self.warped[idx] = template.sample(xp);
        }
        self.rows = build_jacobian(&self.grads, state, model);
        self.refresh_products();
    }

    #[inline]
    pub fn radius(&self) -> i32 {
        self.radius
    }

    /// Window anchor the rows are currently expressed in.
    #[inline]
    pub fn center(&self) -> [i32; 2] {
        self.center
    }

    pub fn rows(&self) -> &[Vec3] {
        &self.rows
    }

    pub fn warped_template(&self) -> &[f64] {
        &self.warped
    }

    pub fn gradients(&self) -> &GradientField {
        &self.grads
    }

    pub fn gram(&self) -> &Mat3 {
        &self.c
    }

    pub fn template_projection(&self) -> Vec3 {
        self.p_t
    }

    pub fn template_norm_sq(&self) -> f64 {
        self.t_norm_sq
    }

    /// Recompute `C`, `p_t` and `‖t‖²` from the stored rows.
    pub fn refresh_products(&mut self) {
        let (c, p_t, t_norm_sq) = cache_products(&self.rows, &self.warped);
        self.c = c;
        self.p_t = p_t;
        self.t_norm_sq = t_norm_sq;
    }

    /// Largest relative deviation of the maintained quantities from their
    /// from-scratch recomputation.
    pub fn audit_consistency(&self) -> f64 {
        let (c, p_t, t_norm_sq) = cache_products(&self.rows, &self.warped);
        let mut scale = t_norm_sq.abs();
        let mut diff = (self.t_norm_sq - t_norm_sq).abs();
        let mut c_scale = 0.0f64;
        let mut c_diff = 0.0f64;
        for r in 0..3 {
            for col in 0..3 {
                c_scale = c_scale.max(c[r][col].abs());
                c_diff = c_diff.max((self.c[r][col] - c[r][col]).abs());
            }
        }
        let mut p_scale = 0.0f64;
        let mut p_diff = 0.0f64;
        for i in 0..3 {
            p_scale = p_scale.max(p_t[i].abs());
            p_diff = p_diff.max((self.p_t[i] - p_t[i]).abs());
        }
        scale = scale.max(1e-30);
        let rel_t = diff / scale;
        let rel_c = c_diff / c_scale.max(1e-30);
        let rel_p = p_diff / p_scale.max(1e-30);
        diff = rel_t.max(rel_c).max(rel_p);
        diff
    }

    /// Re-evaluate one row set at the given state (activity gate, gradient
    /// sample and warp derivative), patching the derived quantities row by
    /// row. Used for the rows whose model-pixel activity may have flipped
    /// when the buffer content changed: a frozen row of a pixel that lost or
    /// gained density would otherwise contradict the inactive-rows-are-zero
    /// convention and corrupt the step.
    pub fn refresh_rows(
        &mut self,
        indices: &[u32],
        template: &DensityMap,
        state: &FeatureState,
        model: &ModelWindow,
    ) {
        debug_assert_eq!(model.center(), self.center, "cache and model anchors diverged");
        let warp = FrozenWarp::new(state);
        for &i in indices {
            let idx = i as usize;
            let global = model.global_of(idx);
            let xp = warp.to_template(global);
            self.refresh_row(idx, xp, global, template, &warp, model);
        }
    }

    /// Window-offset pixels touched by one event at `position` under this
    /// cache's anchor, as row indices.
    pub fn touched_rows(&self, position: [f64; 2], out: &mut Vec<u32>) {
        let (base, _) = crate::density::bilinear_weights([
            position[0] - self.center[0] as f64,
            position[1] - self.center[1] as f64,
        ]);
        for offset in crate::density::NEIGHBORHOOD {
            let px = [base[0] + offset[0], base[1] + offset[1]];
            if px[0].abs() > self.radius as i64 || px[1].abs() > self.radius as i64 {
                continue;
            }
            let idx = ((px[1] + self.radius as i64) as usize) * self.side
                + (px[0] + self.radius as i64) as usize;
            if !out.contains(&(idx as u32)) {
                out.push(idx as u32);
            }
        }
    }

    /// Amortized drift guard: re-evaluate the next `count` rows in index
    /// order, wrapping around the window. Bounds every row's staleness to
    /// one sweep period without the cost spike of a full rebuild.
    pub fn sweep_refresh(
        &mut self,
        count: usize,
        template: &DensityMap,
        state: &FeatureState,
        model: &ModelWindow,
    ) {
        debug_assert_eq!(model.center(), self.center, "cache and model anchors diverged");
        let warp = FrozenWarp::new(state);
        let len = self.rows.len();
        for _ in 0..count.min(len) {
            let idx = self.sweep_cursor;
            self.sweep_cursor = (self.sweep_cursor + 1) % len;
            let global = model.global_of(idx);
            let xp = warp.to_template(global);
            self.refresh_row(idx, xp, global, template, &warp, model);
        }
    }

    /// Apply a template splat incrementally: refresh the perturbed gradient
    /// pixels, re-evaluate the jacobian rows and warped-template entries
    /// whose sampling footprint intersects the change set (at the given,
    /// freshest state), and patch `C`, `p_t`, `‖t‖²` by subtracting the old
    /// contributions and adding the new ones. Returns the number of rows
    /// refreshed.
    pub fn apply_splat(
        &mut self,
        template: &DensityMap,
        state: &FeatureState,
        model: &ModelWindow,
        changes: &ChangeSet,
    ) -> Result<usize, StaleChangeSet> {
        if changes.is_empty() {
            return Ok(0);
        }
        for &px in changes.density_pixels() {
            if !self.grads.in_bounds(px) {
                return Err(StaleChangeSet);
            }
        }
        for &px in changes.gradient_pixels() {
            if !self.grads.in_bounds(px) {
                return Err(StaleChangeSet);
            }
        }
        debug_assert_eq!(model.center(), self.center, "cache and model anchors diverged");

        for &px in changes.gradient_pixels() {
            self.grads.refresh_at(template, px);
        }

        // Bounding box of the gradient change set in template coordinates.
        let mut lo = [i32::MAX; 2];
        let mut hi = [i32::MIN; 2];
        for &px in changes.gradient_pixels() {
            for axis in 0..2 {
                lo[axis] = lo[axis].min(px[axis]);
                hi[axis] = hi[axis].max(px[axis]);
            }
        }
        // A row samples inside the box iff its footprint base pixel lies in
        // [lo - 1, hi] per axis; map that region back to global pixels and
        // dilate by one to absorb the floor.
        let corners = [
            [lo[0] as f64 - 1.0, lo[1] as f64 - 1.0],
            [hi[0] as f64 + 1.0, lo[1] as f64 - 1.0],
            [lo[0] as f64 - 1.0, hi[1] as f64 + 1.0],
            [hi[0] as f64 + 1.0, hi[1] as f64 + 1.0],
        ];
        let mut gmin = [f64::INFINITY; 2];
        let mut gmax = [f64::NEG_INFINITY; 2];
        for corner in corners {
            let g = warp_from_template(corner, state);
            for axis in 0..2 {
                gmin[axis] = gmin[axis].min(g[axis]);
                gmax[axis] = gmax[axis].max(g[axis]);
            }
        }
        let mut refreshed = 0;
        let warp = FrozenWarp::new(state);
        let x0 = ((gmin[0].floor() as i64) - 1).max((self.center[0] - self.radius) as i64) as i32;
        let x1 = ((gmax[0].ceil() as i64) + 1).min((self.center[0] + self.radius) as i64) as i32;
        let y0 = ((gmin[1].floor() as i64) - 1).max((self.center[1] - self.radius) as i64) as i32;
        let y1 = ((gmax[1].ceil() as i64) + 1).min((self.center[1] + self.radius) as i64) as i32;
        for gy in y0..=y1 {
            for gx in x0..=x1 {
                let global = [gx as f64, gy as f64];
                let xp = warp.to_template(global);
                let bx = xp[0].floor() as i64;
                let by = xp[1].floor() as i64;
                // Footprint {b, b+1}² against the change-set box.
                if bx + 1 < lo[0] as i64
                    || bx > hi[0] as i64
                    || by + 1 < lo[1] as i64
                    || by > hi[1] as i64
                {
                    continue;
                }
                let idx = ((gy - self.center[1] + self.radius) as usize) * self.side
                    + (gx - self.center[0] + self.radius) as usize;
                self.refresh_row(idx, xp, global, template, &warp, model);
                refreshed += 1;
            }
        }
        Ok(refreshed)
    }

    fn refresh_row(
        &mut self,
        idx: usize,
        xp: [f64; 2],
        global: [f64; 2],
        template: &DensityMap,
        warp: &FrozenWarp,
        model: &ModelWindow,
    ) {
        let old_row = self.rows[idx];
        let old_t = self.warped[idx];
        if !model.is_active(idx) && old_row == ZERO3 {
            // Inactive with a vanished row: the refresh would freeze the
            // warped entry and rewrite zeros, changing nothing.
            return;
        }
        mat3_add_outer(&mut self.c, old_row, -1.0);
        self.p_t = sub3(self.p_t, scale3(old_row, old_t));
        self.t_norm_sq -= old_t * old_t;

        if model.is_active(idx) {
            let (t, gx, gy) = sample_template_and_gradient(template, &self.grads, xp);
            self.warped[idx] = t;
            let w = warp.jacobian(global);
            self.rows[idx] = [
                gx * w[0][0] + gy * w[1][0],
                gx * w[0][1] + gy * w[1][1],
                gx * w[0][2] + gy * w[1][2],
            ];
        } else {
            // Frozen warped-template entry; its derivative row vanishes.
            self.rows[idx] = ZERO3;
        }

        let new_row = self.rows[idx];
        let new_t = self.warped[idx];
        mat3_add_outer(&mut self.c, new_row, 1.0);
        self.p_t = add3(self.p_t, scale3(new_row, new_t));
        self.t_norm_sq += new_t * new_t;
    }

    /// Lightweight solve: uses the maintained `C`, `p_t`, `‖t‖²` and only
    /// touches active model pixels for the model projections.
    pub fn solve_step(&self, model: &ModelWindow) -> Result<StepSolution, SolverError> {
        if self.t_norm_sq <= 0.0 {
            return Err(SolverError::DegenerateWindow);
        }
        let m_norm = model.norm();
        if m_norm <= 0.0 {
            return Err(SolverError::DegenerateWindow);
        }
        let t_norm = self.t_norm_sq.sqrt();
        let values = model.values();
        let mut p_m = ZERO3;
        let mut t_dot_m = 0.0;
        for &i in model.active() {
            let idx = i as usize;
            let v = values[idx] / m_norm;
            p_m = add3(p_m, scale3(self.rows[idx], v));
            t_dot_m += self.warped[idx] * v;
        }
        let rho = t_dot_m / t_norm;
        let solved = solve_guarded(&self.c, self.p_t, self.t_norm_sq, p_m, rho)?;
        Ok(StepSolution {
            delta: sub3(scale3(solved.q_m, solved.lambda), solved.q_t),
            lambda: solved.lambda,
            rho,
        })
    }

    /// Non-incremental solve: recomputes every quantity from the stored rows
    /// — the Gram matrix, the projections, the explicit pseudo-inverse and
    /// the full-length residual — exactly as the closed-form step is stated.
    /// Algebraically identical to [`Self::solve_step`]; the model projections
    /// use the same sparse accumulation order so the routes differ only in
    /// how the template-side quantities are produced.
    pub fn solve_step_full(
        &self,
        model: &ModelWindow,
        scratch: &mut FullSolveScratch,
    ) -> Result<StepSolution, SolverError> {
        let len = self.rows.len();
        let (c, p_t, t_norm_sq) = cache_products(&self.rows, &self.warped);
        if t_norm_sq <= 0.0 {
            return Err(SolverError::DegenerateWindow);
        }
        let m_norm = model.norm();
        if m_norm <= 0.0 {
            return Err(SolverError::DegenerateWindow);
        }
        let t_norm = t_norm_sq.sqrt();

        // Dense normalized model vector and full-length projections, as the
        // non-incremental formulation states them.
        scratch.m_hat.resize(len, 0.0);
        let values = model.values();
        for i in 0..len {
            scratch.m_hat[i] = values[i] / m_norm;
        }
        let mut p_m = ZERO3;
        let mut t_dot_m = 0.0;
        for i in 0..len {
            let v = scratch.m_hat[i];
            p_m = add3(p_m, scale3(self.rows[i], v));
            t_dot_m += self.warped[i] * v;
        }
        let rho = t_dot_m / t_norm;
        let solved = solve_guarded(&c, p_t, t_norm_sq, p_m, rho)?;

        // Explicit pseudo-inverse A = C⁻¹Jᵀ (stored column-wise) applied to
        // the full residual λm̂ - t.
        let c_inv =
            mat3_inverse(&c).ok_or(SolverError::IllConditioned { cond: f64::INFINITY })?;
        scratch.pinv_cols.resize(len, ZERO3);
        scratch.residual.resize(len, 0.0);
        for i in 0..len {
            scratch.pinv_cols[i] = mat3_mul_vec(&c_inv, self.rows[i]);
            scratch.residual[i] = solved.lambda * scratch.m_hat[i] - self.warped[i];
        }
        let mut delta = ZERO3;
        for i in 0..len {
            delta = add3(delta, scale3(scratch.pinv_cols[i], scratch.residual[i]));
        }
        Ok(StepSolution {
            delta,
            lambda: solved.lambda,
            rho,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, EventBuffer};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn cost_of_identical_vectors_is_zero() {
        let t = vec![1.0, 2.0, 3.0];
        assert!(ecc_cost(&t, &t).unwrap().abs() < 1e-15);
    }

    #[test]
    fn cost_is_scale_invariant() {
        let t = vec![1.0, 2.0, 3.0];
        let m: Vec<f64> = t.iter().map(|v| v * 5.0).collect();
        assert!(ecc_cost(&t, &m).unwrap().abs() < 1e-15);

        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..100 {
            let t: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let alpha = rng.random_range(0.1..10.0);
            let beta = rng.random_range(0.1..10.0);
            let ta: Vec<f64> = t.iter().map(|v| v * alpha).collect();
            let mb: Vec<f64> = m.iter().map(|v| v * beta).collect();
            let base = ecc_cost(&t, &m).unwrap();
            let scaled = ecc_cost(&ta, &mb).unwrap();
            assert!((base - scaled).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_of_orthogonal_unit_vectors_is_two() {
        let t = vec![1.0, 0.0];
        let m = vec![0.0, 1.0];
        assert!((ecc_cost(&t, &m).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cost_equals_two_minus_twice_correlation() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..200 {
            let t: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m: Vec<f64> = (0..25).map(|_| rng.random_range(-2.0..2.0)).collect();
            let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mn = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            if tn < 1e-9 || mn < 1e-9 {
                continue;
            }
            let rho: f64 = t.iter().zip(&m).map(|(a, b)| (a / tn) * (b / mn)).sum();
            let cost = ecc_cost(&t, &m).unwrap();
            assert!((cost - (2.0 - 2.0 * rho)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_norm_vector_is_rejected() {
        let z = vec![0.0; 4];
        let m = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(ecc_cost(&z, &m).unwrap_err(), SolverError::DegenerateWindow);
    }

    #[test]
    fn products_of_zero_jacobian_are_zero() {
        let rows = vec![ZERO3; 9];
        let warped = vec![1.0; 9];
        let (c, p_t, t2) = cache_products(&rows, &warped);
        assert_eq!(c, ZERO_MAT3);
        assert_eq!(p_t, ZERO3);
        assert!((t2 - 9.0).abs() < 1e-12);
    }

    /// Closed-form eigenvalues of a symmetric 3x3 matrix (trigonometric
    /// method), used as an independent oracle for the PSD property.
    fn sym3_eigenvalues(m: &Mat3) -> [f64; 3] {
        let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        if p1 == 0.0 {
            return [m[0][0], m[1][1], m[2][2]];
        }
        let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = *m;
        for i in 0..3 {
            b[i][i] -= q;
        }
        let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det_b / (p * p * p) / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        [e1, e2, e3]
    }

    #[test]
    fn gram_matrix_is_symmetric_and_psd() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let rows: Vec<Vec3> = (0..40)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect();
            let warped: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..2.0)).collect();
            let (c, _, _) = cache_products(&rows, &warped);
            for r in 0..3 {
                for col in 0..3 {
                    assert!((c[r][col] - c[col][r]).abs() < 1e-12);
                }
            }
            let eigs = sym3_eigenvalues(&c);
            for e in eigs {
                assert!(e >= -1e-10, "negative eigenvalue {e}");
            }
        }
    }

    fn window_of(radius: i32, values: Vec<f64>) -> ModelWindow {
        ModelWindow::from_values(radius, [0, 0], values)
    }

    #[test]
    fn perfect_alignment_yields_zero_step_and_lambda_norm_t() {
        let mut rng = StdRng::seed_from_u64(21);
        let radius = 2;
        let len = 25;
        let rows: Vec<Vec3> = (0..len)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let warped: Vec<f64> = (0..len).map(|_| rng.random_range(0.5..2.0)).collect();
        let cache = EccCache::from_parts(radius, [0, 0], rows, warped.clone());
        // Model proportional to the warped template: normalized vectors match.
        let model = window_of(radius, warped.iter().map(|v| v * 3.0).collect());
        let solution = cache.solve_step(&model).unwrap();
        let t_norm = cache.template_norm_sq().sqrt();
        assert!((solution.lambda - t_norm).abs() < 1e-9 * t_norm);
        assert!((solution.rho - 1.0).abs() < 1e-12);
        let delta_norm = crate::mat::norm3(solution.delta);
        assert!(delta_norm < 1e-10, "delta should vanish, got {delta_norm}");
    }

    #[test]
    fn template_in_jacobian_span_is_rejected() {
        let mut rng = StdRng::seed_from_u64(33);
        let radius = 2;
        let len = 25;
        let rows: Vec<Vec3> = (0..len)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect();
        let coeff = [0.3, -1.1, 0.7];
        let warped: Vec<f64> = rows.iter().map(|r| dot3(*r, coeff)).collect();
        let cache = EccCache::from_parts(radius, [0, 0], rows, warped);
        let model = window_of(radius, (0..len).map(|_| rng.random_range(0.1..1.0)).collect());
        match cache.solve_step(&model) {
            Err(SolverError::TemplateInSpan { .. }) => {}
            other => panic!("expected span rejection, got {other:?}"),
        }
    }

    #[test]
    fn vanishing_denominator_is_rejected() {
        let radius = 2;
        let len = 25;
        // Rows supported on pixels 0..3, template on 4..8, model on 9..12:
        // p_t = 0, rho = 0 and p_m = 0, so the scale denominator vanishes.
        let mut rows = vec![ZERO3; len];
        rows[0] = [1.0, 0.0, 0.0];
        rows[1] = [0.0, 1.0, 0.0];
        rows[2] = [0.0, 0.0, 1.0];
        let mut warped = vec![0.0; len];
        warped[4] = 1.0;
        warped[5] = 2.0;
        let mut model_values = vec![0.0; len];
        model_values[9] = 1.0;
        model_values[10] = 1.0;
        let cache = EccCache::from_parts(radius, [0, 0], rows, warped);
        let model = window_of(radius, model_values);
        match cache.solve_step(&model) {
            Err(SolverError::DegenerateLambda { .. }) => {}
            other => panic!("expected degenerate lambda, got {other:?}"),
        }
    }

    #[test]
    fn ill_conditioned_gram_is_rejected() {
        let radius = 2;
        let len = 25;
        let mut rows = vec![ZERO3; len];
        rows[0] = [1.0, 0.0, 0.0]; // rank-1 C
        let mut warped = vec![0.0; len];
        warped[5] = 1.0;
        let mut model_values = vec![0.0; len];
        model_values[0] = 1.0;
        let cache = EccCache::from_parts(radius, [0, 0], rows, warped);
        let model = window_of(radius, model_values);
        match cache.solve_step(&model) {
            Err(SolverError::IllConditioned { .. }) => {}
            other => panic!("expected ill-conditioned rejection, got {other:?}"),
        }
    }

    fn random_template_and_model(
        rng: &mut StdRng,
        radius: i32,
        splats: usize,
    ) -> (DensityMap, ModelWindow, FeatureState) {
        let mut template = DensityMap::new(radius);
        let span = radius as f64 - 2.0;
        let mut positions = Vec::new();
        for _ in 0..splats {
            let p = [rng.random_range(-span..span), rng.random_range(-span..span)];
            template.splat(p);
            positions.push(p);
        }
        let state = FeatureState::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
        );
        let mut buffer = EventBuffer::with_capacity((splats | 1).max(3));
        for (i, p) in positions.iter().enumerate() {
            let global = warp_from_template(*p, &state);
            let jittered = [
                global[0] + rng.random_range(-0.4..0.4),
                global[1] + rng.random_range(-0.4..0.4),
            ];
            buffer
                .push(Event::new(i as i64, jittered[0], jittered[1], 1))
                .unwrap();
        }
        let model = ModelWindow::build(&buffer, &state, radius).unwrap();
        (template, model, state)
    }

    #[test]
    fn constant_template_gives_zero_jacobian() {
        let radius = 5;
        let mut template = DensityMap::new(radius);
        for y in -radius..=radius {
            for x in -radius..=radius {
                template.splat([x as f64, y as f64]);
            }
        }
        let grads = template.gradient();
        let state = FeatureState::seed(0.0, 0.0);
        let values = vec![1.0; (2 * radius as usize + 1).pow(2)];
        let model = ModelWindow::from_values(radius, [0, 0], values);
        let rows = build_jacobian(&grads, &state, &model);
        assert!(rows.iter().all(|r| *r == ZERO3));
    }

    #[test]
    fn theta_column_vanishes_at_the_warp_center() {
        let mut rng = StdRng::seed_from_u64(65);
        let (template, model, state) = random_template_and_model(&mut rng, 7, 61);
        let cache = EccCache::build(&template, &state, &model);
        // The model pixel closest to the feature center has no lever arm.
        let center_idx = (0..cache.rows().len())
            .min_by(|&a, &b| {
                let da = {
                    let g = model.global_of(a);
                    (g[0] - state.x).hypot(g[1] - state.y)
                };
                let db = {
                    let g = model.global_of(b);
                    (g[0] - state.x).hypot(g[1] - state.y)
                };
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let row = cache.rows()[center_idx];
        let xy_scale = row[0].abs().max(row[1].abs()).max(1e-9);
        // Lever is at most ~0.7 px, so the rotation column is bounded by the
        // translation columns times that arm.
        assert!(
            row[2].abs() <= xy_scale,
            "theta column {} vs xy scale {xy_scale}",
            row[2]
        );
    }

    #[test]
    fn incremental_update_matches_full_products() {
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..50 {
            let radius = 7;
            let (mut template, model, state) = random_template_and_model(&mut rng, radius, 61);
            let mut cache = EccCache::build(&template, &state, &model);
            let splat_at = [
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            ];
            let footprint = template.splat(splat_at);
            let changes = ChangeSet::from_splat(&footprint, cache.gradients());
            cache
                .apply_splat(&template, &state, &model, &changes)
                .unwrap();
            let audit = cache.audit_consistency();
            assert!(audit < 1e-9, "cache drifted by {audit}");
        }
    }

    #[test]
    fn empty_change_set_leaves_cache_bit_identical() {
        let mut rng = StdRng::seed_from_u64(77);
        let (template, model, state) = random_template_and_model(&mut rng, 7, 61);
        let mut cache = EccCache::build(&template, &state, &model);
        let before_c = *cache.gram();
        let before_p = cache.template_projection();
        let before_t = cache.template_norm_sq();
        let before_rows = cache.rows().to_vec();
        cache
            .apply_splat(&template, &state, &model, &ChangeSet::empty())
            .unwrap();
        assert_eq!(before_t.to_bits(), cache.template_norm_sq().to_bits());
        for i in 0..3 {
            assert_eq!(before_p[i].to_bits(), cache.template_projection()[i].to_bits());
            for j in 0..3 {
                assert_eq!(before_c[i][j].to_bits(), cache.gram()[i][j].to_bits());
            }
        }
        for (a, b) in before_rows.iter().zip(cache.rows()) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn stale_change_set_is_rejected() {
        let mut rng = StdRng::seed_from_u64(99);
        let (template, model, state) = random_template_and_model(&mut rng, 7, 61);
        let mut cache = EccCache::build(&template, &state, &model);
        let mut bogus = ChangeSet::empty();
        bogus.density[0] = [100, 100];
        bogus.n_density = 1;
        assert_eq!(
            cache.apply_splat(&template, &state, &model, &bogus),
            Err(StaleChangeSet)
        );
    }

    #[test]
    fn both_solve_routes_agree() {
        let mut rng = StdRng::seed_from_u64(111);
        let mut scratch = FullSolveScratch::default();
        for _ in 0..25 {
            let (template, model, state) = random_template_and_model(&mut rng, 7, 61);
            let cache = EccCache::build(&template, &state, &model);
            let light = cache.solve_step(&model);
            let full = cache.solve_step_full(&model, &mut scratch);
            match (light, full) {
                (Ok(a), Ok(b)) => {
                    for k in 0..3 {
                        let denom = a.delta[k].abs().max(1e-9);
                        assert!(
                            (a.delta[k] - b.delta[k]).abs() / denom < 1e-9,
                            "delta mismatch {:?} vs {:?}",
                            a.delta,
                            b.delta
                        );
                    }
                    assert!((a.lambda - b.lambda).abs() <= 1e-9 * a.lambda.abs().max(1.0));
                    assert!((a.rho - b.rho).abs() < 1e-12);
                }
                (Err(ea), Err(eb)) => assert_eq!(ea, eb),
                other => panic!("routes disagree: {other:?}"),
            }
        }
    }
}
