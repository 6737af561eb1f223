//! On-disk format for generating-function coefficient paths.
//!
//! The artifact stores the relay segments (node times, coefficients and
//! their time derivatives at full double precision), the model
//! identification with an integrity hash, the partition, and the estimated
//! trust radius. Loading rebuilds the model from its name and parameters
//! and refuses hash mismatches.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{HamiltonianModel, PhaseState, ReferenceTrajectory};
use crate::ode::{OdeNode, OdeSolution, Termination};
use crate::partition::BoundaryPartition;

use super::{GeneratingFunction, GfPath, GfSegment, HjError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub ip: Vec<usize>,
    pub kr: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub label: String,
    pub equilibrium: bool,
    /// `(t, flat state)` samples; a single entry for an equilibrium.
    pub samples: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub t: f64,
    pub coeffs: Vec<f64>,
    pub dcoeffs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub partition: PartitionSpec,
    pub nodes: Vec<NodeSpec>,
}

/// Serializable generating-function artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GfArtifact {
    pub format: String,
    pub model: ModelSpec,
    pub model_hash: String,
    pub order: usize,
    pub t0: f64,
    pub t1: f64,
    pub tol: f64,
    /// Partition the artifact answers queries as.
    pub partition: PartitionSpec,
    /// Partition the coefficient path was solved as.
    pub requested_partition: PartitionSpec,
    pub reference: ReferenceSpec,
    pub trust_radius: f64,
    pub segments: Vec<SegmentSpec>,
}

pub const ARTIFACT_FORMAT: &str = "gfbvp-gf-v1";

/// FNV-1a over the canonical model/artifact identification string.
fn fnv1a(data: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in data.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

fn partition_spec(p: &BoundaryPartition) -> PartitionSpec {
    PartitionSpec {
        ip: p.ip_indices(),
        kr: p.kr_indices(),
    }
}

fn partition_from_spec(spec: &PartitionSpec, n: usize) -> Result<BoundaryPartition, HjError> {
    BoundaryPartition::new(n, &spec.ip, &spec.kr)
        .map_err(|e| HjError::BadArtifact(format!("bad partition: {e}")))
}

fn integrity_payload(model: &HamiltonianModel, order: usize, requested: &BoundaryPartition) -> String {
    format!("{}|order={}|source={}", model.key(), order, requested.label())
}

impl GfArtifact {
    /// Hash binding the artifact to its model, order and solved kind.
    pub fn expected_hash(
        model: &HamiltonianModel,
        order: usize,
        requested: &BoundaryPartition,
    ) -> String {
        fnv1a(&integrity_payload(model, order, requested))
    }
}

impl GeneratingFunction {
    pub fn to_artifact(&self) -> Result<GfArtifact, HjError> {
        let model = self.model();
        match model.name() {
            "harmonic" | "hill" | "crtbp" => {}
            other => {
                return Err(HjError::BadArtifact(format!(
                    "model `{other}` has no named constructor; artifacts support the builtin models"
                )))
            }
        }
        let reference = self.reference();
        let samples = if reference.is_equilibrium() {
            let (t0, _) = reference.span();
            vec![(t0, reference.state_at(t0)?)]
        } else {
            let (t0, t1) = reference.span();
            // Preserve the reference densely enough for re-interpolation.
            let count = 512;
            (0..=count)
                .map(|i| {
                    let t = t0 + (t1 - t0) * i as f64 / count as f64;
                    Ok((t, reference.state_at(t)?))
                })
                .collect::<Result<Vec<_>, HjError>>()?
        };
        let (t0, t1) = self.span();
        Ok(GfArtifact {
            format: ARTIFACT_FORMAT.to_string(),
            model: ModelSpec {
                name: model.name().to_string(),
                params: model.params().to_vec(),
                n: model.n(),
            },
            model_hash: GfArtifact::expected_hash(model, self.order(), self.source_partition()),
            order: self.order(),
            t0,
            t1,
            tol: self.tol(),
            partition: partition_spec(self.partition()),
            requested_partition: partition_spec(self.source_partition()),
            reference: ReferenceSpec {
                label: reference.label().to_string(),
                equilibrium: reference.is_equilibrium(),
                samples,
            },
            trust_radius: self.trust_radius(),
            segments: self
                .source
                .segments
                .iter()
                .map(|seg| SegmentSpec {
                    partition: partition_spec(&seg.partition),
                    nodes: seg
                        .sol
                        .nodes
                        .iter()
                        .map(|n| NodeSpec {
                            t: n.t,
                            coeffs: n.y.clone(),
                            dcoeffs: n.dy.clone(),
                        })
                        .collect(),
                })
                .collect(),
        })
    }

    pub fn from_artifact(artifact: &GfArtifact) -> Result<GeneratingFunction, HjError> {
        if artifact.format != ARTIFACT_FORMAT {
            return Err(HjError::BadArtifact(format!(
                "unknown format `{}` (expected {ARTIFACT_FORMAT})",
                artifact.format
            )));
        }
        let model = model_from_spec(&artifact.model)?;
        let n = model.n();
        let requested = partition_from_spec(&artifact.requested_partition, n)?;
        let partition = partition_from_spec(&artifact.partition, n)?;
        let expected = GfArtifact::expected_hash(&model, artifact.order, &requested);
        if expected != artifact.model_hash {
            return Err(HjError::BadArtifact(format!(
                "model hash mismatch: artifact has {}, reconstruction gives {expected}",
                artifact.model_hash
            )));
        }
        if artifact.segments.is_empty() {
            return Err(HjError::BadArtifact("artifact has no segments".into()));
        }
        let basis_len = crate::poly::basis(2 * n, artifact.order).len();
        for seg in &artifact.segments {
            if seg.nodes.len() < 2 {
                return Err(HjError::BadArtifact("segment needs at least two nodes".into()));
            }
            for node in &seg.nodes {
                if node.coeffs.len() != basis_len || node.dcoeffs.len() != basis_len {
                    return Err(HjError::BadArtifact(
                        "node coefficient length does not match the basis".into(),
                    ));
                }
            }
        }

        let reference = if artifact.reference.equilibrium {
            let (t, flat) = &artifact.reference.samples[0];
            let state = PhaseState::from_flat(flat)?;
            ReferenceTrajectory::equilibrium(
                model,
                &state,
                t.min(artifact.t0),
                artifact.t1.max(*t),
                &artifact.reference.label,
            )?
        } else {
            let samples: Result<Vec<(f64, PhaseState)>, HjError> = artifact
                .reference
                .samples
                .iter()
                .map(|(t, flat)| Ok((*t, PhaseState::from_flat(flat)?)))
                .collect();
            ReferenceTrajectory::from_samples(model, &samples?, 1e-2, &artifact.reference.label)?
        };

        let segments: Result<Vec<GfSegment>, HjError> = artifact
            .segments
            .iter()
            .map(|seg| {
                let nodes: Vec<OdeNode> = seg
                    .nodes
                    .iter()
                    .map(|n| OdeNode {
                        t: n.t,
                        y: n.coeffs.clone(),
                        dy: n.dcoeffs.clone(),
                    })
                    .collect();
                let t_end = nodes.last().unwrap().t;
                let y_end = nodes.last().unwrap().y.clone();
                Ok(GfSegment {
                    partition: partition_from_spec(&seg.partition, n)?,
                    sol: OdeSolution {
                        nodes,
                        t_end,
                        y_end,
                        steps_accepted: 0,
                        steps_rejected: 0,
                        rhs_evals: 0,
                        termination: Termination::Completed,
                    },
                })
            })
            .collect();
        let path = GfPath {
            segments: segments?,
            requested,
            order: artifact.order,
            reference,
            tol: artifact.tol,
        };
        Ok(GeneratingFunction {
            source: Arc::new(path),
            partition,
            trust_radius: artifact.trust_radius,
        })
    }
}

fn model_from_spec(spec: &ModelSpec) -> Result<HamiltonianModel, HjError> {
    let param = |name: &str| -> Result<f64, HjError> {
        spec.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| HjError::BadArtifact(format!("model parameter `{name}` missing")))
    };
    match spec.name.as_str() {
        "harmonic" => Ok(HamiltonianModel::harmonic_oscillator(param("omega")?)),
        "hill" => Ok(HamiltonianModel::hill()),
        "crtbp" => Ok(HamiltonianModel::crtbp(param("mu")?)),
        other => Err(HjError::BadArtifact(format!("unknown model `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hj::solve_gf;
    use crate::partition::GfKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn artifact_round_trip_preserves_evaluation() {
        let model = HamiltonianModel::hill();
        let l2 = model.libration_points().unwrap()[1].clone();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &l2, 0.0, 1.5, "L2").unwrap();
        let gf = solve_gf(&model, &reference, &GfKind::F2.partition(2), 3, 0.0, 1.5, 1e-10)
            .unwrap();
        // The span crosses the first relay switch, so segments round-trip.
        assert!(gf.segment_count() >= 2);
        let artifact = gf.to_artifact().unwrap();
        let json = serde_json::to_string(&artifact).unwrap();
        let parsed: GfArtifact = serde_json::from_str(&json).unwrap();
        let rebuilt = GeneratingFunction::from_artifact(&parsed).unwrap();
        for t in [0.4, 1.2] {
            let (a, pa) = gf.segment_poly_at(t).unwrap();
            let (b, pb) = rebuilt.segment_poly_at(t).unwrap();
            assert_eq!(pa, pb);
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                assert_eq!(x, y, "serialization must be bit-exact");
            }
        }
        assert_abs_diff_eq!(gf.trust_radius(), rebuilt.trust_radius());
    }

    #[test]
    fn tampered_hash_is_refused() {
        let model = HamiltonianModel::harmonic_oscillator(1.0);
        let origin = PhaseState::new(vec![0.0], vec![0.0]).unwrap();
        let reference =
            ReferenceTrajectory::equilibrium(model.clone(), &origin, 0.0, 1.0, "origin").unwrap();
        let gf = solve_gf(&model, &reference, &GfKind::F2.partition(1), 2, 0.0, 1.0, 1e-10)
            .unwrap();
        let mut artifact = gf.to_artifact().unwrap();
        // A different model parameter must invalidate the stored hash.
        artifact.model.params = vec![("omega".into(), 2.0)];
        assert!(matches!(
            GeneratingFunction::from_artifact(&artifact),
            Err(HjError::BadArtifact(_))
        ));
    }
}
