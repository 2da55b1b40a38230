//! Gradient, quantizer and compute checks behind the `selfcheck` command.

use resotok_core::checks::{
    generator_compute_is_constant, generator_grad_check, instrumented_compute, op_grad_checks, quantizer_oracle,
    tokenizer_grad_check, GRAD_TOLERANCE,
};
use resotok_core::config::{CodebookConfig, GenConfig};

use crate::error::Result;

/// Instrumented and analytic counts must agree to this relative gap.
pub const COMPUTE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckLine { name: name.into(), passed, detail: detail.into() }
    }
}

fn grad_line(name: impl Into<String>, err: f64) -> CheckLine {
    CheckLine::new(name, err <= GRAD_TOLERANCE, format!("max relative error {err:.3e}"))
}

/// Finite-difference checks of every operation and both model losses.
pub fn gradient_checks(seed: u64) -> Result<Vec<CheckLine>> {
    let mut out: Vec<CheckLine> = op_grad_checks(seed)?
        .into_iter()
        .map(|c| grad_line(format!("grad {}", c.name), c.max_rel_error))
        .collect();
    out.push(grad_line("grad tokenizer loss", tokenizer_grad_check(seed + 1)?.max_rel_error));
    for eos in [false, true] {
        let r = generator_grad_check(seed + 2, eos)?;
        out.push(grad_line(format!("grad generator loss (eos {eos})"), r.max_rel_error));
    }
    Ok(out)
}

/// Batched quantization of 100 latents against an exhaustive scan.
pub fn quantizer_check(seed: u64) -> Result<CheckLine> {
    let geometry = CodebookConfig { n_cb: 8, m: 64, d_sub: 4 };
    let bad = quantizer_oracle(geometry, 100, seed)?;
    Ok(CheckLine::new("quantizer vs exhaustive scan", bad == 0, format!("{bad} mismatched indices")))
}

/// Resolution-invariant generator counts and instrumented-forward agreement.
pub fn compute_checks(seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = Vec::new();
    for (name, cfg) in [
        ("micro", GenConfig::micro()),
        ("desk", GenConfig::desk()),
        ("reference-b", GenConfig::reference_b()),
        ("reference-xxl", GenConfig::reference_xxl()),
    ] {
        let l = 64.min(cfg.max_len);
        out.push(CheckLine::new(
            format!("constant generator compute ({name}, L={l})"),
            generator_compute_is_constant(&cfg, l),
            "bit-identical totals across target resolutions",
        ));
    }
    for c in instrumented_compute(seed)? {
        let gap = c.rel_error();
        out.push(CheckLine::new(
            format!("instrumented {}", c.name),
            gap <= COMPUTE_TOLERANCE,
            format!("analytic {} vs counted {} (gap {:.2}%)", c.analytic, c.instrumented, 100.0 * gap),
        ));
    }
    Ok(out)
}

/// Every self-check in a fixed order.
pub fn run(seed: u64) -> Result<Vec<CheckLine>> {
    let mut out = gradient_checks(seed)?;
    out.push(quantizer_check(seed)?);
    out.extend(compute_checks(seed)?);
    Ok(out)
}
