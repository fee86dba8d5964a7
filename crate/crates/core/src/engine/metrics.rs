use std::fmt::Write as _;

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,L_adv,L_cau,L_reg1,L_reg2,mean_cau_mask_causal_nodes,mean_cau_mask_env_nodes";

/// One CSV row. Terms that do not apply to a split or method are `None` and
/// serialize as empty fields.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f32,
    pub accuracy: f32,
    pub l_adv: Option<f32>,
    pub l_cau: Option<f32>,
    pub l_reg1: Option<f32>,
    pub l_reg2: Option<f32>,
    pub mask_causal: Option<f32>,
    pub mask_env: Option<f32>,
}

fn field(out: &mut String, v: Option<f32>) {
    out.push(',');
    if let Some(v) = v {
        write!(out, "{v}").expect("writing to a String");
    }
}

pub fn write_metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{}", r.epoch, r.split, r.loss, r.accuracy).expect("writing to a String");
        for v in [r.l_adv, r.l_cau, r.l_reg1, r.l_reg2, r.mask_causal, r.mask_env] {
            field(&mut out, v);
        }
        out.push('\n');
    }
    out
}
