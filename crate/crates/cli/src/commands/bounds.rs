use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use stiefel_cluster::bounds::{
    check_cu_condition, chi2_lower_tail_bound, covering_number_bound, frobenius_norm_tail,
    gershgorin_m_bound, lemma_integral_bound, lemma_kl_bound, log_covering_number_bound,
    opnorm_bound, t_min_max, theorem1_rhs, theorem2_failure_prob, verify_chi2_lower,
    verify_chi2_upper, verify_frobenius, verify_opnorm, DEFAULT_C_COV, DEFAULT_RHO,
};
use stiefel_cluster::{BoundInputs, DimensionConvention, Error};

use crate::files::write_json;
use crate::{CliError, Settings};

/// Inputs that only the report needs on top of [`BoundInputs`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReportInputs {
    pub bounds: BoundInputs,
    pub epsilon_net: f64,
    pub oracle_term: f64,
    pub x_resid: f64,
    pub m_norm: f64,
    pub e_norm: f64,
    pub monte_carlo: bool,
    pub mc_draws: usize,
    pub mc_seed: u64,
    /// Keys that fell back to built-in values for free constants.
    pub defaulted_constants: Vec<&'static str>,
}

pub fn report_inputs(s: &Settings) -> Result<ReportInputs, CliError> {
    let n = s.get_or("n", 60usize)?;
    let k = s.get_or("k", 3usize)?;
    let sigma_min = s.get_or("sigma_min", 0.05f64)?;
    let coherence = s.get_or("coherence", 0.0f64)?;
    let b = BoundInputs {
        n,
        d: s.get_or("d", 5usize)?,
        k,
        rank: s.get_or("rank", k)?,
        epsilon: s.get_or("epsilon", 0.1)?,
        c_u: s.get_or("c_u", 30.0)?,
        c_o: s.get_or("c_o", 1.0)?,
        rho: s.get_or("rho", DEFAULT_RHO)?,
        c_cov: s.get_or("c_cov", DEFAULT_C_COV)?,
        nu_min: s.get_or("nu_min", 1.0)?,
        nu_max: s.get_or("nu_max", 2.0)?,
        sigma_min,
        sigma_max: s.get_or("sigma_max", sigma_min)?,
        u: s.get_or("u", 1.0)?,
        coherence,
        n_k_max: s.get_or("n_k_max", n.div_ceil(k.max(1)))?,
        mu_prior: s.get_or("mu_prior", 0.1)?,
    };
    b.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let defaulted_constants = ["c_cov", "rho"].into_iter().filter(|k| !s.contains(k)).collect();
    Ok(ReportInputs {
        epsilon_net: s.get_or("epsilon_net", 0.25)?,
        oracle_term: s.get_or("oracle_term", 0.0)?,
        x_resid: s.get_or("x_resid", b.nu_max)?,
        m_norm: s.get_or("m_norm", gershgorin_m_bound(b.n_k_max, b.coherence, b.k))?,
        e_norm: s.get_or("e_norm", opnorm_bound(b.n, b.d, b.sigma_max).0)?,
        monte_carlo: s.get_bool("monte_carlo", false)?,
        mc_draws: s.get_or("mc_draws", 10_000usize)?,
        mc_seed: s.get_or("mc_seed", 0u64)?,
        defaulted_constants,
        bounds: b,
    })
}

fn value_or_error(r: Result<f64, Error>) -> Value {
    match r {
        Ok(v) => json!({ "value": v, "vacuous": false, "error": null }),
        Err(Error::VacuousBound(msg)) => json!({ "value": null, "vacuous": true, "error": msg }),
        Err(e) => json!({ "value": null, "vacuous": false, "error": e.to_string() }),
    }
}

fn per_convention<T: serde::Serialize>(
    mut f: impl FnMut(DimensionConvention) -> Result<T, Error>,
) -> Value {
    let mut map = serde_json::Map::new();
    for conv in DimensionConvention::ALL {
        let v = match f(conv) {
            Ok(v) => serde_json::to_value(v).expect("serializable"),
            Err(e) => json!({ "error": e.to_string() }),
        };
        map.insert(conv.name().to_string(), v);
    }
    Value::Object(map)
}

fn spot_checks(r: &ReportInputs) -> Vec<Value> {
    let b = &r.bounds;
    let mut checks = Vec::new();
    let mut push = |name: &str, lo: Option<f64>, hi: Option<f64>, strict: bool| {
        let passed = match (lo, hi) {
            (Some(a), Some(c)) if strict => a < c,
            (Some(a), Some(c)) => a <= c,
            _ => true,
        };
        checks.push(json!({ "check": name, "low": lo, "high": hi, "passed": passed }));
    };

    let mut more_nu = b.clone();
    more_nu.nu_max = b.nu_max * 1.5 + 0.1;
    push(
        "prediction bound increases with nu_max",
        theorem1_rhs(b, r.oracle_term).ok(),
        theorem1_rhs(&more_nu, r.oracle_term).ok(),
        true,
    );
    push(
        "prediction bound increases with the oracle term",
        theorem1_rhs(b, r.oracle_term).ok(),
        theorem1_rhs(b, r.oracle_term + 1.0).ok(),
        true,
    );
    let fp = |inp: &BoundInputs, net: f64| {
        theorem2_failure_prob(inp, net, DimensionConvention::NBased)
            .ok()
            .map(|f| f.total)
    };
    let mut more_nu_min = b.clone();
    more_nu_min.nu_min = b.nu_min * 1.5 + 0.1;
    push(
        "failure probability does not decrease with nu_min",
        fp(b, r.epsilon_net),
        fp(&more_nu_min, r.epsilon_net),
        false,
    );
    if r.epsilon_net < b.c_cov {
        push(
            "failure probability does not decrease on a finer net",
            fp(b, r.epsilon_net),
            fp(b, r.epsilon_net / 2.0),
            false,
        );
    }
    push(
        "integral bound increases with c_U",
        Some(lemma_integral_bound(r.x_resid, b.c_u, r.m_norm, r.e_norm)),
        Some(lemma_integral_bound(r.x_resid, b.c_u * 1.5, r.m_norm, r.e_norm)),
        r.m_norm + r.e_norm > 0.0,
    );
    checks
}

fn monte_carlo(r: &ReportInputs) -> Value {
    let b = &r.bounds;
    let mut out = serde_json::Map::new();
    if let Ok(t) = t_min_max(b, DimensionConvention::NBased) {
        let m = b.n * (b.n - b.rank);
        if t.t_min > 0.0 {
            out.insert(
                "chi2_lower_at_t_min".into(),
                json!({ "t": t.t_min, "m": m, "check": verify_chi2_lower(t.t_min, m, r.mc_draws, r.mc_seed) }),
            );
        }
        if t.t_max > 0.0 {
            out.insert(
                "chi2_upper_at_t_max".into(),
                json!({ "t": t.t_max, "m": m, "check": verify_chi2_upper(t.t_max, m, r.mc_draws, r.mc_seed.wrapping_add(1)) }),
            );
        }
    }
    out.insert(
        "frobenius".into(),
        json!(verify_frobenius(b.n, b.d, b.u, b.sigma_max, r.mc_draws, r.mc_seed.wrapping_add(2))),
    );
    out.insert(
        "operator_norm".into(),
        json!(verify_opnorm(b.n, b.d, b.sigma_max, r.mc_draws, r.mc_seed.wrapping_add(3))),
    );
    Value::Object(out)
}

pub fn report(r: &ReportInputs) -> Value {
    let b = &r.bounds;
    let mut warnings: Vec<String> = Vec::new();
    let failure = per_convention(|conv| {
        let fp = theorem2_failure_prob(b, r.epsilon_net, conv)?;
        for w in &fp.warnings {
            warnings.push(format!("{}: {w}", conv.name()));
        }
        Ok(fp)
    });
    let t_ranges = per_convention(|conv| t_min_max(b, conv));
    let cu = match check_cu_condition(b, r.m_norm, r.e_norm) {
        Ok(holds) => json!({ "holds": holds, "error": null }),
        Err(e) => json!({ "holds": null, "error": e.to_string() }),
    };
    let chi2_at_t_min = per_convention(|conv| {
        let t = t_min_max(b, conv)?;
        let m = b.residual_dof(conv)? as usize;
        let (clipped, raw) = chi2_lower_tail_bound(t.t_min, m);
        Ok(json!({ "t": t.t_min, "m": m, "clipped": clipped, "raw": raw }))
    });
    let (frob_threshold, frob_prob) = frobenius_norm_tail(b.n, b.d, b.u, b.sigma_max);
    let (op_threshold, op_prob) = opnorm_bound(b.n, b.d, b.sigma_max);

    let mut notes = vec![
        "the prediction bound and the KL bound both carry the 1/mu_prior factor inside the prior-mass term".to_string(),
        "failure probabilities are given for both dimension conventions: n(n-R) with nR, and n(d-R) with dR".to_string(),
        "bounds at or above one are reported unclamped and flagged vacuous".to_string(),
    ];
    if !r.defaulted_constants.is_empty() {
        notes.push(format!(
            "{} use built-in defaults (c_cov = {DEFAULT_C_COV}, rho = {DEFAULT_RHO}); these constants are free, not fixed by the theory",
            r.defaulted_constants.join(" and ")
        ));
    }

    json!({
        "inputs": r,
        "terms": {
            "cu_condition": cu,
            "prediction_bound": value_or_error(theorem1_rhs(b, r.oracle_term)),
            "kl_bound": value_or_error(lemma_kl_bound(b)),
            "integral_bound": { "value": lemma_integral_bound(r.x_resid, b.c_u, r.m_norm, r.e_norm) },
            "covering_number": {
                "value": covering_number_bound(b.n, b.rank, r.epsilon_net, b.c_cov),
                "log_value": log_covering_number_bound(b.n, b.rank, r.epsilon_net, b.c_cov),
            },
            "chi2_lower_at_t_min": chi2_at_t_min,
            "frobenius_tail": { "threshold": frob_threshold, "prob_bound": frob_prob },
            "operator_norm": { "threshold": op_threshold, "prob_bound": op_prob },
            "gershgorin_m_bound": gershgorin_m_bound(b.n_k_max, b.coherence, b.k),
            "t_range": t_ranges,
            "failure_probability": failure,
        },
        "warnings": warnings,
        "notes": notes,
        "monotonicity": spot_checks(r),
        "monte_carlo": if r.monte_carlo { monte_carlo(r) } else { Value::Null },
        "default_convention": DimensionConvention::default().name(),
    })
}

pub fn run(s: &Settings, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let inputs = report_inputs(s)?;
    let path = out.join("bounds.json");
    write_json(&path, &report(&inputs))?;
    Ok(vec![path])
}
