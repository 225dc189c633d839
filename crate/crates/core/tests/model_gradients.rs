mod common;

use common::{random, rng, tiny_plan, worst_param_error};
use dcac_core::losses::{cross_entropy_loss, domain_loss, soft_dice_loss, DICE_SMOOTH};
use dcac_core::model;
use dcac_core::params::ParamStore;
use dcac_core::planner::PlanConfig;
use dcac_core::{backbone, dcac};
use dcac_tape::gradcheck::{central_difference, relative_error, spread_indices, STEP};
use dcac_tape::{Tape, Tensor};
use rand::Rng;

const TOL: f64 = 1e-4;

fn backbone_objective(
    params: &ParamStore<f64>,
    plan: &PlanConfig,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
) -> (f64, ParamStore<f64>, Tensor<f64>) {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, true);
    let xv = tape.variable(x.clone());
    let (_, dec) = backbone::forward(&mut tape, &b, plan, xv).unwrap();
    let value = tape.value(dec.baseline_logits).dot(r);
    let mut g = tape.backward(vec![(dec.baseline_logits, r.clone())]);
    let gx = g.take(xv).unwrap();
    (value, params.gradients(&b, &mut g), gx)
}

#[test]
fn backbone_gradients_match_finite_differences() {
    let plan = tiny_plan(false, 2);
    let params: ParamStore<f64> = model::build(&plan, &mut rng(1)).unwrap();
    let mut r0 = rng(2);
    let x = random(&mut r0, &[2, 3, 8, 8]);
    let r = random(&mut r0, &[2, 2, 8, 8]);
    let (_, analytic, gx) = backbone_objective(&params, &plan, &x, &r);
    let (worst, at) = worst_param_error(&params, &analytic, 6, |p| backbone_objective(p, &plan, &x, &r).0);
    assert!(worst < TOL, "worst relative error {worst} at {at}");

    let idx = spread_indices(x.numel(), 24);
    let num = central_difference(|probe| backbone_objective(&params, &plan, probe, &r).0, &x, &idx, STEP);
    for (&i, &n) in idx.iter().zip(&num) {
        assert!(relative_error(gx.data()[i], n) < TOL, "input {i}: {} vs {n}", gx.data()[i]);
    }
}

/// Full DCAC objective: Dice + CE on the logits plus domain CE.
fn dcac_objective(
    params: &ParamStore<f64>,
    plan: &PlanConfig,
    x: &Tensor<f64>,
    target: &[u8],
    domains: &[usize],
) -> (f64, ParamStore<f64>) {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let out = model::forward(&mut tape, &b, plan, xv).unwrap();
    let probs = tape.softmax(out.logits);
    let (dice, gd) = soft_dice_loss(tape.value(probs), target, DICE_SMOOTH).unwrap();
    let (ce, gc) = cross_entropy_loss(tape.value(out.logits), target).unwrap();
    let dp = out.domain_probs.unwrap();
    let (dl, gdl) = domain_loss(tape.value(dp), domains).unwrap();
    let mut g = tape.backward(vec![(probs, gd), (out.logits, gc), (dp, gdl)]);
    (dice + ce + plan.domain_loss_weight * dl, params.gradients(&b, &mut g))
}

#[test]
fn dcac_end_to_end_gradients_match_finite_differences() {
    for stop_gradient in [false, true] {
        let mut plan = tiny_plan(true, 3);
        plan.dcac.stop_gradient_domain_encoding = stop_gradient;
        let params: ParamStore<f64> = model::build(&plan, &mut rng(3)).unwrap();
        let mut r0 = rng(4);
        let x = random(&mut r0, &[2, 3, 8, 8]);
        let target: Vec<u8> = (0..128).map(|_| r0.gen_range(0..2)).collect();
        let domains = [0, 2];
        let (_, analytic) = dcac_objective(&params, &plan, &x, &target, &domains);
        if stop_gradient {
            // Detaching deliberately drops the segmentation path into the
            // predictor and encoder, so finite differences of the full
            // objective only agree on the controllers.
            let heads: Vec<String> = params.names().into_iter().filter(|n| n.contains("controller")).collect();
            let mut sub = ParamStore::new();
            let mut sub_grad = ParamStore::new();
            for n in heads {
                sub.insert(n.clone(), params.get(&n).unwrap().clone());
                sub_grad.insert(n.clone(), analytic.get(&n).unwrap().clone());
            }
            let (worst, at) = worst_param_error(&sub, &sub_grad, 8, |p| {
                let mut full = params.clone();
                for (k, v) in p.iter() {
                    *full.get_mut(k).unwrap() = v.clone();
                }
                dcac_objective(&full, &plan, &x, &target, &domains).0
            });
            assert!(worst < TOL, "stop-gradient heads: {worst} at {at}");
        } else {
            let (worst, at) = worst_param_error(&params, &analytic, 5, |p| dcac_objective(p, &plan, &x, &target, &domains).0);
            assert!(worst < TOL, "worst relative error {worst} at {at}");
        }
    }
}

#[test]
fn stop_gradient_blocks_segmentation_signal_to_predictor() {
    let mut plan = tiny_plan(true, 3);
    plan.dcac.stop_gradient_domain_encoding = true;
    let params: ParamStore<f64> = model::build(&plan, &mut rng(5)).unwrap();
    let mut r0 = rng(6);
    let x = random(&mut r0, &[1, 3, 8, 8]);
    let r = random(&mut r0, &[1, 2, 8, 8]);
    let mut tape = Tape::new();
    let b = params.bind(&mut tape, true);
    let xv = tape.constant(x);
    let out = model::forward(&mut tape, &b, &plan, xv).unwrap();
    let mut g = tape.backward(vec![(out.logits, r)]);
    let grads = params.gradients(&b, &mut g);
    assert_eq!(grads.get("dcac.predictor.fc2.weight").unwrap().max_abs_diff(&Tensor::zeros(&[3, 6])), 0.0);
    assert!(grads.get("dcac.dac_controller.weight").unwrap().data().iter().any(|v| *v != 0.0));
}

#[test]
fn dac_controller_gradient_matches_finite_differences() {
    let plan = tiny_plan(true, 3);
    let params: ParamStore<f64> = model::build(&plan, &mut rng(7)).unwrap();
    let mut r0 = rng(8);
    let pre = random(&mut r0, &[2, 4, 8, 8]);
    let probs = Tensor::from_vec(&[2, 3], vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3]).unwrap();
    let r = random(&mut r0, &[2, 4, 8, 8]);
    let objective = |p: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, true);
        let (xv, pv) = (tape.constant(pre.clone()), tape.constant(probs.clone()));
        let y = dcac::dac_head(&mut tape, &b, &plan, xv, pv).unwrap();
        let v = tape.value(y).dot(&r);
        let mut g = tape.backward(vec![(y, r.clone())]);
        (v, p.gradients(&b, &mut g))
    };
    let (_, analytic) = objective(&params);
    let mut sub = ParamStore::new();
    let mut sub_grad = ParamStore::new();
    for n in ["dcac.dac_controller.weight", "dcac.dac_controller.bias"] {
        sub.insert(n, params.get(n).unwrap().clone());
        sub_grad.insert(n, analytic.get(n).unwrap().clone());
    }
    let (worst, at) = worst_param_error(&sub, &sub_grad, 40, |p| {
        let mut full = params.clone();
        for (k, v) in p.iter() {
            *full.get_mut(k).unwrap() = v.clone();
        }
        objective(&full).0
    });
    assert!(worst < TOL, "{worst} at {at}");
}

fn check_loss_gradient(name: &str, x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>)) {
    let (_, g) = f(x);
    let idx = spread_indices(x.numel(), 50);
    let num = central_difference(|p| f(p).0, x, &idx, STEP);
    for (&i, &n) in idx.iter().zip(&num) {
        let e = relative_error(g.data()[i], n);
        assert!(e < TOL, "{name}[{i}]: analytic {} numeric {n} rel {e}", g.data()[i]);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut r0 = rng(9);
    let target: Vec<u8> = (0..2 * 36).map(|_| r0.gen_range(0..3)).collect();
    let logits = random(&mut r0, &[2, 3, 6, 6]);
    let probs = dcac_core::losses::softmax(&logits);
    check_loss_gradient("dice", &probs, |p| soft_dice_loss(p, &target, DICE_SMOOTH).unwrap());
    check_loss_gradient("ce", &logits, |l| cross_entropy_loss(l, &target).unwrap());
    let dp = Tensor::from_vec(&[3, 4], (0..12).map(|_| r0.gen_range(0.05..1.0)).collect()).unwrap();
    check_loss_gradient("domain", &dp, |p| domain_loss(p, &[0, 3, 1]).unwrap());
}
