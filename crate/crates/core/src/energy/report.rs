//! CSV and JSON renderings of a [`NetworkEnergy`].

use serde::Serialize;

use super::model::NetworkEnergy;

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let mag = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - mag);
    (x * scale).round() / scale
}

/// `x` in scientific notation with `digits` significant digits.
pub fn sci(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits.saturating_sub(1), x)
}

pub const CSV_HEADER: &str = "layer,macs,nonskipped_macs,comp,ifmap,ofmap,weights,total";

pub fn to_csv(net: &NetworkEnergy) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let row = |name: &str, macs: u64, ns: u64, e: &super::model::EnergyBreakdown| {
        format!(
            "{name},{macs},{ns},{},{},{},{},{}\n",
            sci(e.comp, 6),
            sci(e.input_fmap, 6),
            sci(e.output_fmap, 6),
            sci(e.weights, 6),
            sci(e.total(), 6)
        )
    };
    for l in &net.layers {
        out.push_str(&row(&l.layer, l.macs, l.nonskipped_macs, &l.energy));
    }
    out.push_str(&row("total", net.total_macs(), net.total_nonskipped_macs(), &net.total));
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    layer: &'a str,
    macs: u64,
    nonskipped_macs: u64,
    comp: f64,
    ifmap: f64,
    ofmap: f64,
    weights: f64,
    total: f64,
}

pub fn to_json(net: &NetworkEnergy) -> serde_json::Value {
    let row = |layer, macs, nonskipped_macs, e: &super::model::EnergyBreakdown| JsonRow {
        layer,
        macs,
        nonskipped_macs,
        comp: round_sig(e.comp, 6),
        ifmap: round_sig(e.input_fmap, 6),
        ofmap: round_sig(e.output_fmap, 6),
        weights: round_sig(e.weights, 6),
        total: round_sig(e.total(), 6),
    };
    let layers: Vec<JsonRow> = net
        .layers
        .iter()
        .map(|l| row(&l.layer, l.macs, l.nonskipped_macs, &l.energy))
        .collect();
    serde_json::json!({
        "layers": layers,
        "total": row("total", net.total_macs(), net.total_nonskipped_macs(), &net.total),
    })
}
