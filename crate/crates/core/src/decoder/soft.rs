use super::voronoi::Decision;
use crate::channel::GaussianChannelParams;
use crate::codebook::{AssignmentMap, Codebook, PriorDist};
use crate::error::{Error, Result};

/// MAP decoding straight from linear intensities, skipping quantization.
///
/// Scores are `ln pi_g + sum_l ln N(ln I_l | mu_l[c_l], sigma_l[c_l]^2)`.
/// The best molecule is rejected when its normalized posterior is below `q`;
/// `q = 0` never rejects. Exact ties go to the lower molecule index.
pub fn decode_soft(
    intensities: &[f64],
    codebook: &Codebook,
    assignment: &AssignmentMap,
    prior: &PriorDist,
    params: &GaussianChannelParams,
    q: f64,
) -> Result<Decision> {
    if intensities.len() != params.rounds() || params.rounds() != codebook.length() {
        return Err(Error::LengthMismatch {
            expected: params.rounds(),
            got: intensities.len(),
        });
    }
    if prior.len() != assignment.molecules() {
        return Err(Error::LengthMismatch {
            expected: assignment.molecules(),
            got: prior.len(),
        });
    }
    let logs = intensities
        .iter()
        .enumerate()
        .map(|(l, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!(
                    "column {}: intensity {v} is not positive",
                    l + 1
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let scores: Vec<f64> = (0..assignment.molecules())
        .map(|g| prior.log_probs()[g] + params.log_density(&logs, assignment.codeword(codebook, g)))
        .collect();
    let mut best = 0;
    for g in 1..scores.len() {
        if scores[g] > scores[best] {
            best = g;
        }
    }
    let mass: f64 = scores.iter().map(|s| (s - scores[best]).exp()).sum();
    let posterior = 1.0 / mass;
    Ok(Decision {
        molecule: (posterior >= q).then_some(best),
        posterior,
    })
}
