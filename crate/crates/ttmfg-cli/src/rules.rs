//! Text and JSON listings of cubature rules.

use serde::Serialize;
use ttmfg::cubature::{moment_defect, rule_for, CubatureRule, RuleKind};

use crate::CliError;

#[derive(Serialize)]
struct RuleListing<'a> {
    kind: &'a str,
    dim: usize,
    nodes: usize,
    variance: f64,
    weight_sum: f64,
    has_negative_weights: bool,
    defect_order_3: f64,
    defect_order_5: f64,
    rule: &'a CubatureRule,
}

pub fn build(kind: &str, dim: usize, nu: f64, dt: f64) -> Result<CubatureRule, CliError> {
    let kind: RuleKind = kind.parse().map_err(|e: ttmfg::Error| CliError::Usage(e.to_string()))?;
    rule_for(kind, dim, nu, dt).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn render_json(rule: &CubatureRule) -> Result<String, CliError> {
    let listing = RuleListing {
        kind: rule.kind.name(),
        dim: rule.dim,
        nodes: rule.len(),
        variance: rule.variance,
        weight_sum: rule.weight_sum(),
        has_negative_weights: rule.has_negative_weights,
        defect_order_3: moment_defect(rule, 3),
        defect_order_5: moment_defect(rule, 5),
        rule,
    };
    Ok(serde_json::to_string_pretty(&listing)?)
}

pub fn render_text(rule: &CubatureRule) -> String {
    let mut out = format!(
        "# {} rule, d={}, {} nodes, variance {:.6e}, weight sum {:.15}\n",
        rule.kind.name(),
        rule.dim,
        rule.len(),
        rule.variance,
        rule.weight_sum()
    );
    if rule.has_negative_weights {
        out.push_str("# contains negative weights\n");
    }
    out.push_str(&format!(
        "# scaled moment defect: order<=3 {:.3e}, order<=5 {:.3e}\n",
        moment_defect(rule, 3),
        moment_defect(rule, 5)
    ));
    for l in 0..rule.len() {
        let coords: Vec<String> = rule.node(l).iter().map(|v| format!("{v:+.10e}")).collect();
        out.push_str(&format!("{:+.15e} {}\n", rule.weights[l], coords.join(" ")));
    }
    out
}
