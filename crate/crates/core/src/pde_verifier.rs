//! Analytic partial derivatives of the portfolio-call closed form, the
//! two-asset pricing PDE residual, and finite-difference cross-checks.
//!
//! The closed form prices a call on eta S + (1-eta) Z in a market whose only
//! traded assets are the two correlated stocks. It must satisfy the pricing
//! PDE with the shadow rate in place of a riskless rate. This module exposes
//! every partial derivative in analytic form, an independent finite-difference
//! route to the same quantities, and a randomized grid driver that checks the
//! residual and the internal identities instance by instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::closed_form::{solve_y_star, LrClosedFormInputs, Y_STAR_TOLERANCE};
use crate::error::{PricingError, Result};
use crate::normal::{normal_cdf, normal_pdf};
use crate::rootfind::RootResult;

/// Maturities below this cannot support the 1/(2 tau) terms in the partials.
pub const MIN_TAU_FOR_PARTIALS: f64 = 1e-8;
/// Relative step for first-order central differences.
pub const FIRST_ORDER_STEP: f64 = 1e-5;
/// Relative step for second-order central differences.
pub const SECOND_ORDER_STEP: f64 = 2.5e-4;

/// Allowed PDE residual, relative to max(1, price).
pub const PDE_RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Allowed error in each structural identity of the frame.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;
/// Allowed analytic-vs-finite-difference gap, first-order partials.
pub const FD_FIRST_ORDER_TOLERANCE: f64 = 1e-5;
/// Allowed analytic-vs-finite-difference gap, second-order partials.
pub const FD_SECOND_ORDER_TOLERANCE: f64 = 1e-3;

/// Shorthand terms shared by all analytic partials of the closed form.
///
/// At the boundary d the price terms decompose as F1 + F2 = F3, the hatted
/// weights are F_i / D with D = w F1 + w_tilde F2, and G1..G3 are the
/// density-weighted counterparts whose sum vanishes at the solved boundary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AppendixFrame {
    /// Boundary argument d = -y*.
    pub d: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    /// Normalizer D = w F1 + w_tilde F2.
    pub denom: f64,
    pub f1_hat: f64,
    pub f2_hat: f64,
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
}

impl AppendixFrame {
    /// G1 + G2 + G3, zero at the solved boundary.
    pub fn g_sum(&self) -> f64 {
        self.g1 + self.g2 + self.g3
    }

    /// Price of the call assembled from the frame's boundary.
    pub fn price(&self, inputs: &LrClosedFormInputs) -> f64 {
        let (m, w, dw) = (inputs.m(), inputs.w(), inputs.dw());
        inputs.eta * inputs.s * normal_cdf(self.d)
            + (1.0 - inputs.eta) * inputs.z * normal_cdf(self.d - dw)
            - inputs.strike * (-m).exp() * normal_cdf(self.d - w)
    }
}

/// All first- and second-order partials of the boundary d and the price C.
///
/// Each field is the scale-free combination that appears in the pricing PDE:
/// `s_cs` is S times dC/dS, `s2_css` is S^2 times d2C/dS2, and so on.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PartialSet {
    pub d_t: f64,
    pub s_ds: f64,
    pub z_dz: f64,
    pub s2_dss: f64,
    pub sz_dsz: f64,
    pub z2_dzz: f64,
    pub c_t: f64,
    pub s_cs: f64,
    pub z_cz: f64,
    pub s2_css: f64,
    pub sz_csz: f64,
    pub z2_czz: f64,
}

/// Relative errors of the structural identities at one solved instance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IdentityReport {
    /// |F1 + F2 - F3| / F3 (boundary equation restated).
    pub boundary: f64,
    /// |w F1_hat + w_tilde F2_hat - 1|.
    pub unit_weight: f64,
    /// |G1 + G2 + G3| relative to the largest |G_i|.
    pub density_sum: f64,
    /// |w^2 (S d_S)^2 + 2 w wt (S d_S)(Z d_Z) + wt^2 (Z d_Z)^2 - 1|.
    pub gradient_contraction: f64,
    /// Second-derivative contraction against -(w^2 F1_hat + wt^2 F2_hat).
    pub curvature_contraction: f64,
}

impl IdentityReport {
    /// Largest of the five identity errors.
    pub fn worst(&self) -> f64 {
        self.boundary
            .max(self.unit_weight)
            .max(self.density_sum)
            .max(self.gradient_contraction)
            .max(self.curvature_contraction)
    }
}

/// Evaluates the shared shorthand terms at a solved boundary.
pub fn appendix_frame(inputs: &LrClosedFormInputs, root: &RootResult) -> AppendixFrame {
    let d = -root.root;
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    let dw = w - wt;
    let discount = inputs.strike * (-m).exp();
    let f1 = inputs.eta * inputs.s;
    let f2 = (1.0 - inputs.eta) * inputs.z * (-0.5 * dw * dw + dw * d).exp();
    let f3 = discount * (-0.5 * w * w + w * d).exp();
    let denom = w * f1 + wt * f2;
    AppendixFrame {
        d,
        f1,
        f2,
        f3,
        denom,
        f1_hat: f1 / denom,
        f2_hat: f2 / denom,
        g1: f1 * normal_pdf(d),
        g2: (1.0 - inputs.eta) * inputs.z * normal_pdf(d - dw),
        g3: -discount * normal_pdf(d - w),
    }
}

/// Analytic partials of d and C evaluated through the frame.
pub fn analytic_partials(
    inputs: &LrClosedFormInputs,
    frame: &AppendixFrame,
) -> Result<PartialSet> {
    partials_from_frame(inputs, frame, false)
}

fn partials_from_frame(
    inputs: &LrClosedFormInputs,
    frame: &AppendixFrame,
    flip_time_sign: bool,
) -> Result<PartialSet> {
    let tau = inputs.tau;
    if tau < MIN_TAU_FOR_PARTIALS {
        return Err(PricingError::MaturityDegenerate { tau });
    }
    let (m, w, wt) = (inputs.m(), inputs.w(), inputs.w_tilde());
    let dw = w - wt;
    let d = frame.d;
    let (f1h, f2h) = (frame.f1_hat, frame.f2_hat);
    let (g1, g2, g3) = (frame.g1, frame.g2, frame.g3);
    let g = frame.g_sum();
    let hat_sum = f1h + f2h;

    let s_ds = f1h;
    let z_dz = f2h;
    let d_t = -inputs.r_bar * hat_sum + (d - w) / (2.0 * tau) - dw * wt * f2h / (2.0 * tau);
    let s2_dss = f1h * f1h * (dw * dw * f2h - w * w * hat_sum);
    let sz_dsz = -w * wt * f1h * f2h * hat_sum;
    let z2_dzz = f2h * f2h * (dw * dw * f1h - wt * wt * hat_sum);

    let time_decay = if flip_time_sign {
        dw * g2 - w * g3
    } else {
        dw * g2 + w * g3
    };
    let c_t = -inputs.strike * (-m).exp() * normal_cdf(d - w) * inputs.r_bar
        + g * d_t
        + time_decay / (2.0 * tau);
    let s_cs = inputs.eta * inputs.s * normal_cdf(d) + g * s_ds;
    let z_cz = (1.0 - inputs.eta) * inputs.z * normal_cdf(d - dw) + g * z_dz;
    let curvature = dw * g2 + w * g3 - d * g;
    let s2_css = g * s2_dss + curvature * s_ds * s_ds + 2.0 * g1 * s_ds;
    let sz_csz = g * sz_dsz + curvature * s_ds * z_dz + g1 * z_dz + g2 * s_ds;
    let z2_czz = g * z2_dzz + curvature * z_dz * z_dz + 2.0 * g2 * z_dz;

    Ok(PartialSet {
        d_t,
        s_ds,
        z_dz,
        s2_dss,
        sz_dsz,
        z2_dzz,
        c_t,
        s_cs,
        z_cz,
        s2_css,
        sz_csz,
        z2_czz,
    })
}

/// Residual of the pricing PDE with a supplied partial set.
pub fn pde_residual_from_partials(
    inputs: &LrClosedFormInputs,
    price: f64,
    partials: &PartialSet,
) -> f64 {
    let (sig, sig_t) = (inputs.sigma, inputs.sigma_tilde);
    inputs.r_bar * price
        - partials.c_t
        - inputs.r_bar * (partials.s_cs + partials.z_cz)
        - 0.5
            * (sig * sig * partials.s2_css
                + 2.0 * sig * sig_t * partials.sz_csz
                + sig_t * sig_t * partials.z2_czz)
}

/// Residual of the pricing PDE at one instance, via analytic partials.
pub fn lr_pde_residual(inputs: &LrClosedFormInputs) -> Result<f64> {
    let root = solve_y_star(inputs, Y_STAR_TOLERANCE)?;
    let frame = appendix_frame(inputs, &root);
    let partials = analytic_partials(inputs, &frame)?;
    Ok(pde_residual_from_partials(
        inputs,
        frame.price(inputs),
        &partials,
    ))
}

/// Identity errors of the frame and partials at one solved instance.
pub fn identity_report(
    inputs: &LrClosedFormInputs,
    frame: &AppendixFrame,
    partials: &PartialSet,
) -> IdentityReport {
    let (w, wt) = (inputs.w(), inputs.w_tilde());
    let g_scale = frame.g1.abs().max(frame.g2.abs()).max(frame.g3.abs());
    let grad = w * w * partials.s_ds * partials.s_ds
        + 2.0 * w * wt * partials.s_ds * partials.z_dz
        + wt * wt * partials.z_dz * partials.z_dz;
    let curv = w * w * partials.s2_dss
        + 2.0 * w * wt * partials.sz_dsz
        + wt * wt * partials.z2_dzz;
    let curv_target = -(w * w * frame.f1_hat + wt * wt * frame.f2_hat);
    IdentityReport {
        boundary: (frame.f1 + frame.f2 - frame.f3).abs() / frame.f3,
        unit_weight: (w * frame.f1_hat + wt * frame.f2_hat - 1.0).abs(),
        density_sum: if g_scale > 0.0 {
            frame.g_sum().abs() / g_scale
        } else {
            0.0
        },
        gradient_contraction: (grad - 1.0).abs(),
        curvature_contraction: (curv - curv_target).abs() / curv_target.abs().max(1e-3),
    }
}

/// Central-difference partials of d and C, independent of the analytic forms.
pub fn finite_difference_partials(inputs: &LrClosedFormInputs) -> Result<PartialSet> {
    if inputs.tau < MIN_TAU_FOR_PARTIALS {
        return Err(PricingError::MaturityDegenerate { tau: inputs.tau });
    }
    let price = |s: f64, z: f64, tau: f64| -> Result<f64> {
        let shifted = LrClosedFormInputs::from_parts(
            s,
            z,
            inputs.eta,
            inputs.strike,
            tau,
            inputs.r_bar,
            inputs.sigma,
            inputs.sigma_tilde,
        )?;
        let root = solve_y_star(&shifted, Y_STAR_TOLERANCE)?;
        Ok(appendix_frame(&shifted, &root).price(&shifted))
    };
    let boundary = |s: f64, z: f64, tau: f64| -> Result<f64> {
        let shifted = LrClosedFormInputs::from_parts(
            s,
            z,
            inputs.eta,
            inputs.strike,
            tau,
            inputs.r_bar,
            inputs.sigma,
            inputs.sigma_tilde,
        )?;
        Ok(-solve_y_star(&shifted, Y_STAR_TOLERANCE)?.root)
    };

    let (s, z, tau) = (inputs.s, inputs.z, inputs.tau);
    let (hs1, hz1, ht1) = (FIRST_ORDER_STEP * s, FIRST_ORDER_STEP * z, FIRST_ORDER_STEP * tau);
    let (hs2, hz2) = (SECOND_ORDER_STEP * s, SECOND_ORDER_STEP * z);

    let c0 = price(s, z, tau)?;
    let d0 = boundary(s, z, tau)?;

    // Time derivatives flip sign: the stored coordinate is tau = T - t.
    let c_t = -(price(s, z, tau + ht1)? - price(s, z, tau - ht1)?) / (2.0 * ht1);
    let d_t = -(boundary(s, z, tau + ht1)? - boundary(s, z, tau - ht1)?) / (2.0 * ht1);

    let s_cs = s * (price(s + hs1, z, tau)? - price(s - hs1, z, tau)?) / (2.0 * hs1);
    let z_cz = z * (price(s, z + hz1, tau)? - price(s, z - hz1, tau)?) / (2.0 * hz1);
    let s_ds = s * (boundary(s + hs1, z, tau)? - boundary(s - hs1, z, tau)?) / (2.0 * hs1);
    let z_dz = z * (boundary(s, z + hz1, tau)? - boundary(s, z - hz1, tau)?) / (2.0 * hz1);

    let s2_css =
        s * s * (price(s + hs2, z, tau)? - 2.0 * c0 + price(s - hs2, z, tau)?) / (hs2 * hs2);
    let z2_czz =
        z * z * (price(s, z + hz2, tau)? - 2.0 * c0 + price(s, z - hz2, tau)?) / (hz2 * hz2);
    let sz_csz = s * z
        * (price(s + hs2, z + hz2, tau)? - price(s + hs2, z - hz2, tau)?
            - price(s - hs2, z + hz2, tau)?
            + price(s - hs2, z - hz2, tau)?)
        / (4.0 * hs2 * hz2);
    let s2_dss =
        s * s * (boundary(s + hs2, z, tau)? - 2.0 * d0 + boundary(s - hs2, z, tau)?) / (hs2 * hs2);
    let z2_dzz =
        z * z * (boundary(s, z + hz2, tau)? - 2.0 * d0 + boundary(s, z - hz2, tau)?) / (hz2 * hz2);
    let sz_dsz = s * z
        * (boundary(s + hs2, z + hz2, tau)? - boundary(s + hs2, z - hz2, tau)?
            - boundary(s - hs2, z + hz2, tau)?
            + boundary(s - hs2, z - hz2, tau)?)
        / (4.0 * hs2 * hz2);

    Ok(PartialSet {
        d_t,
        s_ds,
        z_dz,
        s2_dss,
        sz_dsz,
        z2_dzz,
        c_t,
        s_cs,
        z_cz,
        s2_css,
        sz_csz,
        z2_czz,
    })
}

/// Worst analytic-vs-finite-difference gaps, split by derivative order.
#[derive(Debug, Clone, Serialize)]
pub struct PartialComparison {
    pub worst_first_order: f64,
    pub worst_first_order_field: String,
    pub worst_second_order: f64,
    pub worst_second_order_field: String,
}

fn gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares two partial sets field by field with scale-aware floors.
pub fn compare_partials(
    inputs: &LrClosedFormInputs,
    analytic: &PartialSet,
    fd: &PartialSet,
) -> PartialComparison {
    let c_floor = 0.01 * inputs.strike.max(1.0);
    let d_floor = 0.01 * (analytic.s_ds.abs() + analytic.z_dz.abs()).max(1.0);
    let first: [(&str, f64, f64, f64); 6] = [
        ("d_t", analytic.d_t, fd.d_t, d_floor),
        ("s_ds", analytic.s_ds, fd.s_ds, d_floor),
        ("z_dz", analytic.z_dz, fd.z_dz, d_floor),
        ("c_t", analytic.c_t, fd.c_t, c_floor),
        ("s_cs", analytic.s_cs, fd.s_cs, c_floor),
        ("z_cz", analytic.z_cz, fd.z_cz, c_floor),
    ];
    let second: [(&str, f64, f64, f64); 6] = [
        ("s2_dss", analytic.s2_dss, fd.s2_dss, d_floor),
        ("sz_dsz", analytic.sz_dsz, fd.sz_dsz, d_floor),
        ("z2_dzz", analytic.z2_dzz, fd.z2_dzz, d_floor),
        ("s2_css", analytic.s2_css, fd.s2_css, c_floor),
        ("sz_csz", analytic.sz_csz, fd.sz_csz, c_floor),
        ("z2_czz", analytic.z2_czz, fd.z2_czz, c_floor),
    ];
    let pick = |rows: &[(&str, f64, f64, f64)]| {
        let mut name = "";
        let mut worst = 0.0;
        for (field, a, b, floor) in rows {
            let e = gap(*a, *b, *floor);
            if e >= worst {
                worst = e;
                name = field;
            }
        }
        (name.to_string(), worst)
    };
    let (worst_first_order_field, worst_first_order) = pick(&first);
    let (worst_second_order_field, worst_second_order) = pick(&second);
    PartialComparison {
        worst_first_order,
        worst_first_order_field,
        worst_second_order,
        worst_second_order_field,
    }
}

/// Options for the randomized grid verification.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub n_instances: usize,
    pub seed: u64,
    /// Also run the finite-difference cross-check per instance.
    pub check_finite_difference: bool,
    /// Negative control: flips one sign in the analytic time partial so the
    /// verification must fail.
    pub inject_sign_error: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_instances: 1000,
            seed: 42,
            check_finite_difference: true,
            inject_sign_error: false,
        }
    }
}

/// One verified instance, kept for the worst-case section of the report.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    #[serde(flatten)]
    pub inputs: LrClosedFormInputs,
    pub price: f64,
    pub pde_residual: f64,
    pub residual_rel: f64,
    pub identities: IdentityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd: Option<PartialComparison>,
}

/// Aggregate result of the randomized grid verification.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub n_instances: usize,
    pub seed: u64,
    pub pass: bool,
    pub failures: Vec<String>,
    pub worst_residual_rel: f64,
    pub worst_boundary_identity: f64,
    pub worst_unit_weight_identity: f64,
    pub worst_density_sum: f64,
    pub worst_gradient_contraction: f64,
    pub worst_curvature_contraction: f64,
    pub worst_fd_first_order: f64,
    pub worst_fd_second_order: f64,
    pub worst_cases: Vec<InstanceReport>,
}

const MAX_REPORTED_FAILURES: usize = 20;
const WORST_CASES_KEPT: usize = 3;

/// Samples valid instances across the verification ranges: volatilities in
/// [0.05, 0.8] with spread at least 0.05, eta in [0, 1] (endpoints forced on a
/// fixed cadence), moneyness in [0.5, 2] at strike 100, maturity in [0.05, 5],
/// shadow rate in [-0.02, 0.1].
pub fn random_instances(seed: u64, count: usize) -> Vec<LrClosedFormInputs> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let sigma: f64 = rng.gen_range(0.05..=0.8);
        let sigma_tilde: f64 = rng.gen_range(0.05..=0.8);
        let eta_draw: f64 = rng.gen_range(0.0..=1.0);
        let s = 100.0 * rng.gen_range(0.5..=2.0);
        let z = 100.0 * rng.gen_range(0.5..=2.0);
        let tau = rng.gen_range(0.05..=5.0);
        let r_bar = rng.gen_range(-0.02..=0.1);
        if (sigma - sigma_tilde).abs() < 0.05 {
            continue;
        }
        let eta = match out.len() % 10 {
            0 => 0.0,
            5 => 1.0,
            _ => eta_draw,
        };
        let inputs =
            LrClosedFormInputs::from_parts(s, z, eta, 100.0, tau, r_bar, sigma, sigma_tilde)
                .expect("sampled parameters are within the valid ranges");
        out.push(inputs);
    }
    out
}

/// Runs the residual, identity, and finite-difference checks over a random
/// grid and aggregates worst cases.
pub fn run_grid_verification(options: &VerifyOptions) -> Result<VerificationReport> {
    if options.n_instances == 0 {
        return Err(PricingError::InvalidInput(
            "grid verification needs at least one instance".into(),
        ));
    }
    let instances = random_instances(options.seed, options.n_instances);
    let mut report = VerificationReport {
        n_instances: options.n_instances,
        seed: options.seed,
        pass: true,
        failures: Vec::new(),
        worst_residual_rel: 0.0,
        worst_boundary_identity: 0.0,
        worst_unit_weight_identity: 0.0,
        worst_density_sum: 0.0,
        worst_gradient_contraction: 0.0,
        worst_curvature_contraction: 0.0,
        worst_fd_first_order: 0.0,
        worst_fd_second_order: 0.0,
        worst_cases: Vec::new(),
    };
    let fail = |report: &mut VerificationReport, message: String| {
        report.pass = false;
        if report.failures.len() < MAX_REPORTED_FAILURES {
            report.failures.push(message);
        }
    };

    for (index, inputs) in instances.iter().enumerate() {
        let root = solve_y_star(inputs, Y_STAR_TOLERANCE)?;
        let frame = appendix_frame(inputs, &root);
        let partials = partials_from_frame(inputs, &frame, options.inject_sign_error)?;
        let price = frame.price(inputs);
        let residual = pde_residual_from_partials(inputs, price, &partials);
        let residual_rel = residual.abs() / price.abs().max(1.0);
        let identities = identity_report(inputs, &frame, &partials);

        if residual_rel > PDE_RESIDUAL_TOLERANCE {
            fail(
                &mut report,
                format!(
                    "instance {index}: pde residual {residual_rel:.3e} exceeds {PDE_RESIDUAL_TOLERANCE:.0e}"
                ),
            );
        }
        for (name, value) in [
            ("boundary identity", identities.boundary),
            ("unit weight identity", identities.unit_weight),
            ("density sum identity", identities.density_sum),
            ("gradient contraction", identities.gradient_contraction),
            ("curvature contraction", identities.curvature_contraction),
        ] {
            if value > IDENTITY_TOLERANCE {
                fail(
                    &mut report,
                    format!("instance {index}: {name} error {value:.3e} exceeds {IDENTITY_TOLERANCE:.0e}"),
                );
            }
        }

        let fd = if options.check_finite_difference {
            let fd_partials = finite_difference_partials(inputs)?;
            let cmp = compare_partials(inputs, &partials, &fd_partials);
            if cmp.worst_first_order > FD_FIRST_ORDER_TOLERANCE {
                fail(
                    &mut report,
                    format!(
                        "instance {index}: first-order partial {} gap {:.3e} exceeds {FD_FIRST_ORDER_TOLERANCE:.0e}",
                        cmp.worst_first_order_field, cmp.worst_first_order
                    ),
                );
            }
            if cmp.worst_second_order > FD_SECOND_ORDER_TOLERANCE {
                fail(
                    &mut report,
                    format!(
                        "instance {index}: second-order partial {} gap {:.3e} exceeds {FD_SECOND_ORDER_TOLERANCE:.0e}",
                        cmp.worst_second_order_field, cmp.worst_second_order
                    ),
                );
            }
            report.worst_fd_first_order = report.worst_fd_first_order.max(cmp.worst_first_order);
            report.worst_fd_second_order =
                report.worst_fd_second_order.max(cmp.worst_second_order);
            Some(cmp)
        } else {
            None
        };

        report.worst_residual_rel = report.worst_residual_rel.max(residual_rel);
        report.worst_boundary_identity = report.worst_boundary_identity.max(identities.boundary);
        report.worst_unit_weight_identity =
            report.worst_unit_weight_identity.max(identities.unit_weight);
        report.worst_density_sum = report.worst_density_sum.max(identities.density_sum);
        report.worst_gradient_contraction = report
            .worst_gradient_contraction
            .max(identities.gradient_contraction);
        report.worst_curvature_contraction = report
            .worst_curvature_contraction
            .max(identities.curvature_contraction);

        let instance = InstanceReport {
            inputs: *inputs,
            price,
            pde_residual: residual,
            residual_rel,
            identities,
            fd,
        };
        report.worst_cases.push(instance);
        report
            .worst_cases
            .sort_by(|a, b| b.residual_rel.total_cmp(&a.residual_rel));
        report.worst_cases.truncate(WORST_CASES_KEPT);
    }
    Ok(report)
}
