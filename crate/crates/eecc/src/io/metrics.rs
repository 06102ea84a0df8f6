//! Plot-ready CSV outputs for evaluation results.

use std::io::Write;

use crate::synth::FeatureErrorReport;

/// `feature_id,age_s,mean_err_px,outlier` rows, one per evaluated feature.
pub fn write_metrics_csv<W: Write>(
    sink: &mut W,
    reports: &[FeatureErrorReport],
) -> std::io::Result<()> {
    writeln!(sink, "feature_id,age_s,mean_err_px,outlier")?;
    for report in reports {
        writeln!(
            sink,
            "{},{:.6},{:.6},{}",
            report.feature_id,
            report.age_s,
            report.mean_pos_err,
            report.outlier as u8
        )?;
    }
    Ok(())
}

/// `t,cdf` rows of the outlier/lost-track cumulative distribution.
pub fn write_cdf_csv<W: Write>(sink: &mut W, samples: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(sink, "t,cdf")?;
    for (t, cdf) in samples {
        writeln!(sink, "{t:.6},{cdf:.6}")?;
    }
    Ok(())
}
