//! Per-agent neural approximators whose outputs satisfy the agent's local
//! constraints by construction: equality rows are eliminated, an MLP
//! produces a point of the open unit `l_inf` ball, and the gauge map carries
//! it into the reduced polytope.

mod elimination;
mod mlp;
mod net;
mod plan;
mod polytope;
mod weights;

use thiserror::Error;

use crate::model::ModelError;
use crate::qp::QpError;

pub use elimination::EliminationMap;
pub use mlp::{accumulate_columns, Mlp, MlpCache, HIDDEN_UNITS, OUTPUT_SCALE};
pub use net::{agent_features, other_inputs, other_slots, AgentContext, ContextCache, GaugeNet};
pub use plan::{InferencePlan, Precision};
pub use polytope::{
    gauge_map, gauge_map_backward, psi_ball, psi_polytope, psi_polytope_arg, ReducedLayout, ReducedPolytope,
    CENTER_MARGIN,
};
pub use weights::{load_nets, save_nets, weights_path, FORMAT_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("no invertible dependent set: {0}")]
    SingularBasis(String),
    #[error("shifted polytope row {row} has slack {slack:e}")]
    BadShift { row: usize, slack: f64 },
    #[error("ball coordinate outside the open unit ball (|v|_inf = {0})")]
    OutOfBall(f64),
    #[error("reduced polytope is unbounded along the requested direction")]
    Unbounded,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation")]
    NonFiniteActivation,
    #[error("infeasible local set: {0}")]
    Infeasible(String),
    #[error("weights missing: {0}")]
    WeightsMissing(String),
    #[error("weight file: {0}")]
    Weights(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Quantity, Vpp, reference_agents};
    use crate::scenario::synthesize_day;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Vpp, crate::model::ScenarioInput) {
        (Vpp::new(reference_agents()), synthesize_day(3).slice(100, 12).unwrap())
    }

    #[test]
    fn reference_partition_prefers_states() {
        let (vpp, scen) = setup();
        let nets = GaugeNet::for_vpp(&vpp, &scen, 1).unwrap();
        let idx = vpp.indices(12);
        let dims: Vec<usize> = nets.iter().map(|n| n.layout.dim()).collect();
        assert_eq!(dims, vec![48, 24, 24]);
        for (i, n) in nets.iter().enumerate() {
            let e = n.elimination();
            assert!(e.condition < 1e3, "agent {i}: condition {}", e.condition);
            for t in 0..12 {
                let po = idx[i].var(Quantity::NetPower, t).unwrap();
                assert!(e.dependent.contains(&po));
            }
        }
        let soc = idx[0].var(Quantity::Soc, 5).unwrap();
        assert!(nets[0].elimination().dependent.contains(&soc));
        let temp = idx[2].var(Quantity::Temperature, 5).unwrap();
        assert!(nets[2].elimination().dependent.contains(&temp));
    }

    #[test]
    fn zero_weights_give_center_completion() {
        let (vpp, scen) = setup();
        let mut net = GaugeNet::new(&vpp, &scen, 0, 1).unwrap();
        net.mlp = Mlp::zeros(net.n_inputs(), HIDDEN_UNITS, net.layout.dim());
        let ctx = net.context(&vpp, &scen).unwrap();
        let u = net.forward(&ctx, &vec![3.0; net.n_other()]).unwrap();
        let expect = net.elimination().complete(ctx.poly.u0.as_slice(), &ctx.offset);
        assert_eq!(u, expect);
    }

    #[test]
    fn random_weights_are_locally_feasible() {
        let (vpp, scen) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..3 {
            let net = GaugeNet::new(&vpp, &scen, i, 4).unwrap();
            let ctx = net.context(&vpp, &scen).unwrap();
            let local = vpp.local(i, &scen).unwrap();
            for _ in 0..50 {
                let other: Vec<f64> = (0..net.n_other()).map(|_| rng.gen_range(-300.0..300.0)).collect();
                let u = net.forward(&ctx, &other).unwrap();
                let (eq, ineq) = local.violations(&u);
                assert!(eq <= 1e-8 && ineq <= 1e-6, "agent {i}: {eq:e} {ineq:e}");
            }
        }
    }

    #[test]
    fn inference_plans_agree_with_full_forward() {
        let (vpp, scen) = setup();
        for i in 0..3 {
            let net = GaugeNet::new(&vpp, &scen, i, 2).unwrap();
            let ctx = net.context(&vpp, &scen).unwrap();
            let local = vpp.local(i, &scen).unwrap();
            let double = InferencePlan::new(&net, &ctx, Precision::Double);
            let single = InferencePlan::new(&net, &ctx, Precision::Single);
            let other: Vec<f64> = (0..net.n_other()).map(|k| k as f64 - 20.0).collect();
            let a = net.forward(&ctx, &other).unwrap();
            let b = double.forward(&other).unwrap();
            let c = single.forward(&other).unwrap();
            for ((x, y), z) in a.iter().zip(&b).zip(&c) {
                assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
                assert!((x - z).abs() < 1e-3 * (1.0 + x.abs()));
            }
            let (eq, ineq) = local.violations(&c);
            assert!(eq <= 1e-8 && ineq <= 1e-6);
        }
    }

    #[test]
    fn weight_file_round_trip() {
        let (vpp, scen) = setup();
        let mut net = GaugeNet::new(&vpp, &scen, 2, 8).unwrap();
        net.mean[3] = 1.25;
        net.std[4] = 0.5;
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf[..200]).to_string();
        assert!(text.starts_with("# loopmac gauge network\nformat 1\n"));
        let back = GaugeNet::read_from(buf.as_slice(), &vpp, &scen, 2).unwrap();
        assert_eq!(back, net);
        assert!(matches!(
            GaugeNet::read_from(buf.as_slice(), &vpp, &scen, 1),
            Err(GaugeError::ShapeMismatch(_))
        ));
        buf.truncate(buf.len() - 3);
        assert!(matches!(GaugeNet::read_from(buf.as_slice(), &vpp, &scen, 2), Err(GaugeError::Weights(_))));
    }

    #[test]
    fn context_cache_reuses_entries() {
        let (vpp, scen) = setup();
        let nets = GaugeNet::for_vpp(&vpp, &scen, 1).unwrap();
        let mut cache = ContextCache::new();
        let a = cache.get(&nets, &vpp, &scen).unwrap();
        let b = cache.get(&nets, &vpp, &scen).unwrap();
        assert!(std::sync::Arc::ptr_eq(&a, &b));
        let other = synthesize_day(3).slice(101, 12).unwrap();
        cache.get(&nets, &vpp, &other).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
