//! Curve-level summaries: transfer scores (area under one learning curve
//! relative to another), sorted sensitivity spectra, and a rank
//! correlation helper for comparing the two sensitivity estimators.

use super::{AnalysisError, SensitivityReport};
use crate::trainer::LearningCurve;

// ── Transfer score ──────────────────────────────────────────────────────

/// Relative performance of one training run against a reference run on
/// the same task: `100 × area(arch) / area(baseline)`, both areas taken by
/// the trapezoid rule after shifting scores up by the task's minimum
/// possible episode score (so areas are nonnegative and a score of 100
/// means "no better or worse than the reference").
///
/// Curves on different step grids are linearly interpolated onto the union
/// of their grids, restricted to the overlapping step range; linear
/// interpolation leaves each curve's trapezoid area over that range
/// unchanged, so the ratio is grid-independent.
pub fn transfer_score(
    arch: &LearningCurve,
    baseline: &LearningCurve,
    min_score: f64,
) -> Result<f64, AnalysisError> {
    let (ax, ay) = shifted(arch, min_score);
    let (bx, by) = shifted(baseline, min_score);
    for (xs, _) in [(&ax, &ay), (&bx, &by)] {
        if xs.len() < 2 {
            return Err(AnalysisError::CurveTooShort { got: xs.len() });
        }
    }
    let (arch_area, base_area) = if ax == bx {
        (trapezoid_area(&ax, &ay), trapezoid_area(&bx, &by))
    } else {
        let lo = ax[0].max(bx[0]);
        let hi = ax[ax.len() - 1].min(bx[bx.len() - 1]);
        if lo >= hi {
            return Err(AnalysisError::DisjointCurves);
        }
        let grid = union_grid(&ax, &bx, lo, hi);
        let ay_r = resample(&ax, &ay, &grid);
        let by_r = resample(&bx, &by, &grid);
        (trapezoid_area(&grid, &ay_r), trapezoid_area(&grid, &by_r))
    };
    if base_area <= 0.0 {
        return Err(AnalysisError::ZeroBaselineAuc);
    }
    Ok(100.0 * arch_area / base_area)
}

fn shifted(curve: &LearningCurve, min_score: f64) -> (Vec<f64>, Vec<f64>) {
    let xs = curve.points.iter().map(|p| p.agent_steps as f64).collect();
    let ys = curve.points.iter().map(|p| p.mean_score - min_score).collect();
    (xs, ys)
}

/// Shifted trapezoid area of a single curve — the building block behind
/// [`transfer_score`], exposed so sweep statistics can aggregate areas
/// before taking a ratio. Curves compared this way must share a step grid.
pub fn curve_area(curve: &LearningCurve, min_score: f64) -> Result<f64, AnalysisError> {
    let (xs, ys) = shifted(curve, min_score);
    if xs.len() < 2 {
        return Err(AnalysisError::CurveTooShort { got: xs.len() });
    }
    Ok(trapezoid_area(&xs, &ys))
}

/// Trapezoid-rule area under `(xs, ys)`; `xs` must be strictly increasing.
pub fn trapezoid_area(xs: &[f64], ys: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..xs.len() {
        area += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
    }
    area
}

/// Sorted union of the two grids clipped to `[lo, hi]`, with both ends
/// included.
fn union_grid(a: &[f64], b: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = a
        .iter()
        .chain(b.iter())
        .copied()
        .filter(|&x| x >= lo && x <= hi)
        .chain([lo, hi])
        .collect();
    grid.sort_by(|p, q| p.partial_cmp(q).expect("steps are finite"));
    grid.dedup();
    grid
}

/// Linear interpolation of `(xs, ys)` at each grid point; the grid must
/// lie within `[xs[0], xs[last]]`.
fn resample(xs: &[f64], ys: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&x| {
            let hi = xs.partition_point(|&p| p < x).min(xs.len() - 1).max(1);
            let (x0, x1) = (xs[hi - 1], xs[hi]);
            let t = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
            ys[hi - 1] + t * (ys[hi] - ys[hi - 1])
        })
        .collect()
}

// ── Sensitivity spectra ─────────────────────────────────────────────────

/// Which columns of each report contribute features to a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumColumns {
    /// Every column before the target (empty for single-column nets).
    Sources,
    /// The target column only.
    Final,
}

/// Per-feature sensitivity values sorted descending, resampled to a shared
/// unit abscissa and averaged across networks.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Common unit-interval grid the curves were resampled onto.
    pub abscissa: Vec<f64>,
    /// Mean resampled spectrum across reports.
    pub mean: Vec<f64>,
    /// Raw sorted values per report, before resampling.
    pub per_network: Vec<Vec<f64>>,
}

/// Concatenates the per-feature sensitivities of the selected columns at
/// one layer, sorts them descending per report, and averages across
/// reports after dilating every sorted list onto a common unit abscissa.
/// Features whose sensitivity is undefined are skipped; reports with no
/// selected features (a single-column net asked for its sources)
/// contribute nothing, and an all-empty selection yields an empty
/// spectrum.
pub fn afs_spectrum(
    reports: &[SensitivityReport],
    layer: usize,
    which: SpectrumColumns,
) -> Result<Spectrum, AnalysisError> {
    if reports.is_empty() {
        return Err(AnalysisError::EmptyReports);
    }
    let mut per_network = Vec::new();
    for report in reports {
        let k = report.n_columns();
        let columns: &[Vec<Option<f64>>] = match which {
            SpectrumColumns::Sources => &report.afs_feature[layer][..k - 1],
            SpectrumColumns::Final => &report.afs_feature[layer][k - 1..],
        };
        let mut values: Vec<f64> = columns.iter().flatten().filter_map(|v| *v).collect();
        if values.is_empty() {
            continue;
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("sensitivities are finite"));
        per_network.push(values);
    }
    if per_network.is_empty() {
        return Ok(Spectrum { abscissa: Vec::new(), mean: Vec::new(), per_network });
    }

    let width = per_network.iter().map(Vec::len).max().expect("nonempty");
    let abscissa: Vec<f64> = if width == 1 {
        vec![0.0]
    } else {
        (0..width).map(|i| i as f64 / (width - 1) as f64).collect()
    };
    let mut mean = vec![0.0; width];
    for values in &per_network {
        let dilated = dilate(values, width);
        for (m, v) in mean.iter_mut().zip(&dilated) {
            *m += v / per_network.len() as f64;
        }
    }
    Ok(Spectrum { abscissa, mean, per_network })
}

/// Stretches a sorted list onto `width` evenly spaced points by linear
/// interpolation; a list already at the target width passes through
/// untouched.
fn dilate(values: &[f64], width: usize) -> Vec<f64> {
    if values.len() == width {
        return values.to_vec();
    }
    if values.len() == 1 {
        return vec![values[0]; width];
    }
    let n = values.len();
    (0..width)
        .map(|i| {
            let t = i as f64 / (width - 1) as f64 * (n - 1) as f64;
            let lo = (t.floor() as usize).min(n - 2);
            let frac = t - lo as f64;
            values[lo] + frac * (values[lo + 1] - values[lo])
        })
        .collect()
}

/// Area under a spectrum's mean curve over its unit abscissa; a summary of
/// how much total sensitivity the selected features carry.
pub fn spectrum_area(spectrum: &Spectrum) -> f64 {
    if spectrum.abscissa.len() < 2 {
        return spectrum.mean.first().copied().unwrap_or(0.0);
    }
    trapezoid_area(&spectrum.abscissa, &spectrum.mean)
}

// ── Rank correlation ────────────────────────────────────────────────────

/// Spearman rank correlation with average ranks for ties. `None` when the
/// slices are shorter than two or either side is entirely tied.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "paired observations");
    if xs.len() < 2 {
        return None;
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

/// 1-based ranks with ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("ranks need finite values"));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::CurvePoint;

    fn curve(points: &[(u64, f64)]) -> LearningCurve {
        let mut c = LearningCurve::new(1);
        for &(steps, score) in points {
            c.push(CurvePoint {
                agent_steps: steps,
                mean_score: score,
                episodes: 1,
                policy_loss: 0.0,
                value_loss: 0.0,
                entropy: 0.0,
                grad_norm: 0.0,
            });
        }
        c
    }

    #[test]
    fn identical_curves_score_exactly_one_hundred() {
        let c = curve(&[(100, -0.5), (200, 0.1), (300, 0.4)]);
        assert_eq!(transfer_score(&c, &c, -1.0).unwrap(), 100.0);
    }

    #[test]
    fn doubling_the_shifted_curve_scores_exactly_two_hundred() {
        let base = curve(&[(100, -0.5), (200, 0.0), (300, 0.75)]);
        let min = -1.0;
        let doubled = curve(
            &base
                .points
                .iter()
                .map(|p| (p.agent_steps, min + 2.0 * (p.mean_score - min)))
                .collect::<Vec<_>>(),
        );
        assert_eq!(transfer_score(&doubled, &base, min).unwrap(), 200.0);
    }

    #[test]
    fn hand_computed_trapezoid_area_matches() {
        // (0, 1), (2, 3), (5, 0): areas 2*(1+3)/2 = 4 and 3*(3+0)/2 = 4.5.
        let area = trapezoid_area(&[0.0, 2.0, 5.0], &[1.0, 3.0, 0.0]);
        assert!((area - 8.5).abs() < 1e-12);
    }

    #[test]
    fn transfer_score_matches_a_hand_ratio_on_hand_curves() {
        // Shifted by +1: arch = (0,1),(100,2); base = (0,1),(100,1).
        // Areas: 150 and 100.
        let arch = curve(&[(0, 0.0), (100, 1.0)]);
        let base = curve(&[(0, 0.0), (100, 0.0)]);
        let score = transfer_score(&arch, &base, -1.0).unwrap();
        assert!((score - 150.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grids_resample_without_changing_the_ratio() {
        // Both curves are piecewise linear; adding interior knots to one
        // grid must not move either area.
        let arch = curve(&[(0, 0.0), (50, 0.5), (100, 1.0)]);
        let base = curve(&[(0, 0.0), (100, 0.0)]);
        let score = transfer_score(&arch, &base, -1.0).unwrap();
        assert!((score - 150.0).abs() < 1e-12, "got {score}");
    }

    #[test]
    fn disjoint_step_ranges_are_an_error() {
        let a = curve(&[(0, 0.0), (100, 1.0)]);
        let b = curve(&[(200, 0.0), (300, 1.0)]);
        assert!(matches!(
            transfer_score(&a, &b, -1.0),
            Err(AnalysisError::DisjointCurves)
        ));
    }

    #[test]
    fn flat_baseline_at_the_minimum_score_is_degenerate() {
        let arch = curve(&[(0, 0.0), (100, 1.0)]);
        let base = curve(&[(0, -1.0), (100, -1.0)]);
        assert!(matches!(
            transfer_score(&arch, &base, -1.0),
            Err(AnalysisError::ZeroBaselineAuc)
        ));
    }

    #[test]
    fn single_point_curves_are_too_short() {
        let a = curve(&[(100, 0.5)]);
        let b = curve(&[(0, 0.0), (100, 1.0)]);
        assert!(matches!(
            transfer_score(&a, &b, -1.0),
            Err(AnalysisError::CurveTooShort { got: 1 })
        ));
    }

    // ── Spectra ─────────────────────────────────────────────────────

    fn report_with_afs(afs_feature: Vec<Vec<Vec<Option<f64>>>>) -> SensitivityReport {
        let fisher = afs_feature
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|col| col.iter().map(|v| v.unwrap_or(0.0)).collect())
                    .collect()
            })
            .collect();
        SensitivityReport {
            target_column: afs_feature[0].len(),
            n_samples: 1,
            layer_labels: (0..afs_feature.len()).map(|i| format!("layer {}", i + 1)).collect(),
            fisher,
            afs_feature,
            afs_layer: Vec::new(),
            afs_layer_raw: Vec::new(),
            missing: Vec::new(),
            aps: None,
        }
    }

    #[test]
    fn single_column_spectrum_is_its_sorted_values() {
        let report = report_with_afs(vec![vec![vec![
            Some(0.1),
            Some(0.7),
            Some(0.2),
        ]]]);
        let spectrum = afs_spectrum(&[report], 0, SpectrumColumns::Final).unwrap();
        assert_eq!(spectrum.per_network, vec![vec![0.7, 0.2, 0.1]]);
        assert_eq!(spectrum.mean, vec![0.7, 0.2, 0.1]);
        assert_eq!(spectrum.abscissa.len(), 3);
    }

    #[test]
    fn all_equal_values_give_a_flat_spectrum() {
        let report =
            report_with_afs(vec![vec![vec![Some(0.25); 4], vec![Some(0.25); 4]]]);
        let spectrum = afs_spectrum(&[report], 0, SpectrumColumns::Sources).unwrap();
        assert!(spectrum.mean.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(spectrum.per_network[0].len(), 4);
    }

    #[test]
    fn spectrum_values_are_sorted_descending_and_missing_entries_skipped() {
        let report = report_with_afs(vec![vec![
            vec![Some(0.4), None, Some(0.9)],
            vec![Some(0.1), Some(0.2), Some(0.3)],
        ]]);
        let spectrum = afs_spectrum(&[report], 0, SpectrumColumns::Sources).unwrap();
        assert_eq!(spectrum.per_network, vec![vec![0.9, 0.4]]);
        for w in spectrum.mean.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn reports_of_different_widths_average_after_dilation() {
        let narrow = report_with_afs(vec![vec![vec![Some(1.0), Some(0.0)]]]);
        let wide = report_with_afs(vec![vec![vec![
            Some(1.0),
            Some(1.0),
            Some(1.0),
        ]]]);
        let spectrum =
            afs_spectrum(&[narrow, wide], 0, SpectrumColumns::Final).unwrap();
        assert_eq!(spectrum.abscissa.len(), 3);
        // Narrow dilates to [1.0, 0.5, 0.0]; wide stays [1, 1, 1].
        assert!((spectrum.mean[0] - 1.0).abs() < 1e-12);
        assert!((spectrum.mean[1] - 0.75).abs() < 1e-12);
        assert!((spectrum.mean[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sources_of_a_single_column_net_yield_an_empty_spectrum() {
        let report = report_with_afs(vec![vec![vec![Some(1.0)]]]);
        let spectrum = afs_spectrum(&[report], 0, SpectrumColumns::Sources).unwrap();
        assert!(spectrum.per_network.is_empty());
        assert!(spectrum.mean.is_empty());
        assert_eq!(spectrum_area(&spectrum), 0.0);
    }

    #[test]
    fn no_reports_is_an_error() {
        assert!(matches!(
            afs_spectrum(&[], 0, SpectrumColumns::Final),
            Err(AnalysisError::EmptyReports)
        ));
    }

    #[test]
    fn flat_unit_spectrum_has_unit_area() {
        let report = report_with_afs(vec![vec![vec![Some(1.0); 5]]]);
        let spectrum = afs_spectrum(&[report], 0, SpectrumColumns::Final).unwrap();
        assert!((spectrum_area(&spectrum) - 1.0).abs() < 1e-12);
    }

    // ── Spearman ────────────────────────────────────────────────────

    #[test]
    fn monotone_sequences_have_unit_rank_correlation() {
        let xs = [0.1, 0.5, 0.9, 2.0];
        let up = [1.0, 2.0, 5.0, 9.0];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&xs, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tied_ranks_average_and_match_a_hand_computation() {
        // xs ranks: [1.5, 1.5, 3]; ys ranks: [1, 2, 3].
        // cov = (1.5-2)(1-2) + (1.5-2)(2-2) + (3-2)(3-2) = 1.5
        // var_x = 0.25 + 0.25 + 1 = 1.5; var_y = 2; rho = 1.5/sqrt(3).
        let xs = [0.2, 0.2, 0.7];
        let ys = [1.0, 2.0, 3.0];
        let rho = spearman(&xs, &ys).unwrap();
        assert!((rho - 1.5 / 3.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rank_inputs_return_none() {
        assert!(spearman(&[1.0], &[2.0]).is_none());
        assert!(spearman(&[3.0, 3.0, 3.0], &[1.0, 2.0, 3.0]).is_none());
    }
}
