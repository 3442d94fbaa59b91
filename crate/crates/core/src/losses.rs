//! Masked segmentation losses and their tape ops.
//!
//! All losses see only the pixels of a [`PixelSelection`]; values at other
//! pixels never enter a sum.

use crate::autograd::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside the logarithm of the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

/// Pixels that participate in a loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelSelection {
    mask: Vec<bool>,
}

impl PixelSelection {
    pub fn new(mask: Vec<bool>) -> Self {
        PixelSelection { mask }
    }

    pub fn none(len: usize) -> Self {
        PixelSelection { mask: vec![false; len] }
    }

    pub fn all(len: usize) -> Self {
        PixelSelection { mask: vec![true; len] }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_selected(&self, px: usize) -> bool {
        self.mask[px]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Per-pixel one-hot targets together with the pixels they apply to.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedSupervision {
    pub targets: Tensor,
    pub selection: PixelSelection,
}

fn check(op: &'static str, probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<(usize, usize)> {
    let (c, h, w) = probs.chw(op)?;
    if target.shape() != probs.shape() {
        return Err(Error::shape(
            op,
            format!("target {:?} vs probabilities {:?}", target.shape(), probs.shape()),
        ));
    }
    if sel.len() != h * w {
        return Err(Error::shape(op, format!("selection covers {} pixels, image has {}", sel.len(), h * w)));
    }
    Ok((c, h * w))
}

/// Overlap statistics of one class over the selected pixels.
struct ClassOverlap {
    intersection: f64,
    target_mass: f64,
    pred_mass: f64,
}

fn overlaps(probs: &Tensor, target: &Tensor, sel: &PixelSelection, c: usize, hw: usize) -> Vec<ClassOverlap> {
    let (p, y) = (probs.data(), target.data());
    (0..c)
        .map(|ch| {
            let mut o = ClassOverlap {
                intersection: 0.0,
                target_mass: 0.0,
                pred_mass: 0.0,
            };
            for px in sel.indices() {
                let i = ch * hw + px;
                o.intersection += y[i] * p[i];
                o.target_mass += y[i];
                o.pred_mass += p[i];
            }
            o
        })
        .collect()
}

/// Per-class Dice loss `1 − 2Σyŷ / (Σy + Σŷ)`; `None` for classes without
/// target pixels in the selection.
pub fn dice_per_class(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<Vec<Option<f64>>> {
    let (c, hw) = check("dice_loss", probs, target, sel)?;
    if sel.count() == 0 {
        return Err(Error::EmptySelection("dice_loss"));
    }
    Ok(overlaps(probs, target, sel, c, hw)
        .into_iter()
        .map(|o| {
            (o.target_mass > 0.0).then(|| 1.0 - 2.0 * o.intersection / (o.target_mass + o.pred_mass))
        })
        .collect())
}

/// Mean Dice loss over classes present in the target, 0 when none is.
pub fn dice_loss(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<f64> {
    let per_class = dice_per_class(probs, target, sel)?;
    let present: Vec<f64> = per_class.into_iter().flatten().collect();
    if present.is_empty() {
        return Ok(0.0);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

fn dice_grad(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<Tensor> {
    let (c, hw) = check("dice_loss", probs, target, sel)?;
    let stats = overlaps(probs, target, sel, c, hw);
    let present = stats.iter().filter(|o| o.target_mass > 0.0).count();
    let mut g = Tensor::zeros(probs.shape());
    if present == 0 {
        return Ok(g);
    }
    let y = target.data();
    let gd = g.data_mut();
    for (ch, o) in stats.iter().enumerate() {
        if o.target_mass <= 0.0 {
            continue;
        }
        let denom = o.target_mass + o.pred_mass;
        for px in sel.indices() {
            let i = ch * hw + px;
            gd[i] = (2.0 * o.intersection / (denom * denom) - 2.0 * y[i] / denom) / present as f64;
        }
    }
    Ok(g)
}

/// `−(1/N)·Σ_sel Σ_c y·log(max(ŷ, 1e-12))`.
pub fn cce_loss(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<f64> {
    let (c, hw) = check("cce_loss", probs, target, sel)?;
    let n = sel.count();
    if n == 0 {
        return Err(Error::EmptySelection("cce_loss"));
    }
    let (p, y) = (probs.data(), target.data());
    let mut total = 0.0;
    for px in sel.indices() {
        for ch in 0..c {
            let i = ch * hw + px;
            if y[i] != 0.0 {
                total -= y[i] * p[i].max(LOG_CLAMP).ln();
            }
        }
    }
    Ok(total / n as f64)
}

fn cce_grad(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<Tensor> {
    let (c, hw) = check("cce_loss", probs, target, sel)?;
    let n = sel.count() as f64;
    let (p, y) = (probs.data(), target.data());
    let mut g = Tensor::zeros(probs.shape());
    let gd = g.data_mut();
    for px in sel.indices() {
        for ch in 0..c {
            let i = ch * hw + px;
            // The clamp is flat below the floor.
            if y[i] != 0.0 && p[i] > LOG_CLAMP {
                gd[i] = -y[i] / (p[i] * n);
            }
        }
    }
    Ok(g)
}

/// Relative weights of the two supervised terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedWeights {
    pub dice: f64,
    pub cce: f64,
}

impl Default for SupervisedWeights {
    fn default() -> Self {
        SupervisedWeights { dice: 1.0, cce: 1.0 }
    }
}

/// Dice plus cross-entropy with unit weights.
pub fn supervised_loss(probs: &Tensor, target: &Tensor, sel: &PixelSelection) -> Result<f64> {
    Ok(dice_loss(probs, target, sel)? + cce_loss(probs, target, sel)?)
}

/// Mean squared error between student probabilities and fused targets,
/// averaged over selected pixels and classes; 0 for an empty selection.
pub fn consistency_loss(student_probs: &Tensor, fused: &FusedSupervision) -> Result<f64> {
    let (c, hw) = check("consistency_loss", student_probs, &fused.targets, &fused.selection)?;
    let n = fused.selection.count();
    if n == 0 {
        return Ok(0.0);
    }
    let (p, m) = (student_probs.data(), fused.targets.data());
    let mut total = 0.0;
    for px in fused.selection.indices() {
        for ch in 0..c {
            let i = ch * hw + px;
            let d = p[i] - m[i];
            total += d * d;
        }
    }
    Ok(total / (n * c) as f64)
}

fn consistency_grad(student_probs: &Tensor, fused: &FusedSupervision) -> Result<Tensor> {
    let (c, hw) = check("consistency_loss", student_probs, &fused.targets, &fused.selection)?;
    let n = fused.selection.count();
    let mut g = Tensor::zeros(student_probs.shape());
    if n == 0 {
        return Ok(g);
    }
    let scale = 2.0 / (n * c) as f64;
    let (p, m) = (student_probs.data(), fused.targets.data());
    let gd = g.data_mut();
    for px in fused.selection.indices() {
        for ch in 0..c {
            let i = ch * hw + px;
            gd[i] = scale * (p[i] - m[i]);
        }
    }
    Ok(g)
}

/// `alpha·sup + (1 − alpha)·cons`.
pub fn total_loss(sup: f64, cons: f64, alpha: f64) -> f64 {
    alpha * sup + (1.0 - alpha) * cons
}

fn scaled(g: Tensor, by: f64) -> Tensor {
    let shape = g.shape().to_vec();
    let data = g.into_data().into_iter().map(|v| v * by).collect();
    Tensor::new(&shape, data).expect("same shape")
}

struct DiceOp {
    target: Tensor,
    sel: PixelSelection,
}

impl Op for DiceOp {
    fn name(&self) -> &'static str {
        "dice_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(scaled(dice_grad(inputs[0], &self.target, &self.sel)?, grad.item()))])
    }
}

struct CceOp {
    target: Tensor,
    sel: PixelSelection,
}

impl Op for CceOp {
    fn name(&self) -> &'static str {
        "cce_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(scaled(cce_grad(inputs[0], &self.target, &self.sel)?, grad.item()))])
    }
}

struct ConsistencyOp(FusedSupervision);

impl Op for ConsistencyOp {
    fn name(&self) -> &'static str {
        "consistency_loss"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(scaled(consistency_grad(inputs[0], &self.0)?, grad.item()))])
    }
}

/// Records the weighted supervised loss on probabilities `probs`.
pub fn supervised_on_tape(
    tape: &mut Tape,
    probs: Var,
    target: &Tensor,
    sel: &PixelSelection,
    weights: SupervisedWeights,
) -> Result<Var> {
    let dice = dice_loss(tape.value(probs), target, sel)?;
    let cce = cce_loss(tape.value(probs), target, sel)?;
    let dice = tape.record(
        Box::new(DiceOp {
            target: target.clone(),
            sel: sel.clone(),
        }),
        &[probs],
        Tensor::scalar(dice),
    )?;
    let cce = tape.record(
        Box::new(CceOp {
            target: target.clone(),
            sel: sel.clone(),
        }),
        &[probs],
        Tensor::scalar(cce),
    )?;
    tape.weighted_sum(&[(dice, weights.dice), (cce, weights.cce)])
}

pub fn consistency_on_tape(tape: &mut Tape, probs: Var, fused: &FusedSupervision) -> Result<Var> {
    let value = consistency_loss(tape.value(probs), fused)?;
    tape.record(Box::new(ConsistencyOp(fused.clone())), &[probs], Tensor::scalar(value))
}

pub fn total_on_tape(tape: &mut Tape, sup: Var, cons: Var, alpha: f64) -> Result<Var> {
    tape.weighted_sum(&[(sup, alpha), (cons, 1.0 - alpha)])
}

/// One-hot encoding of class indices; pixels whose label is `>= num_classes`
/// get an all-zero target.
pub fn one_hot(labels: &[u8], num_classes: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut t = Tensor::zeros(&[num_classes, h, w]);
    let d = t.data_mut();
    for (px, &l) in labels.iter().enumerate() {
        if (l as usize) < num_classes {
            d[l as usize * hw + px] = 1.0;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{finite_diff_check, ops};

    fn probs(c: usize, h: usize, w: usize, per_pixel: &[&[f64]]) -> Tensor {
        let hw = h * w;
        let mut t = Tensor::zeros(&[c, h, w]);
        for (px, row) in per_pixel.iter().enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                t.data_mut()[ch * hw + px] = v;
            }
        }
        t
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let y = one_hot(&[0, 1, 1, 2], 4, 2, 2);
        let sel = PixelSelection::all(4);
        assert_eq!(dice_loss(&y, &y, &sel).unwrap(), 0.0);

        // Every class-1 pixel predicted as class 3 with certainty.
        let pred = one_hot(&[0, 3, 3, 2], 4, 2, 2);
        let per = dice_per_class(&pred, &y, &sel).unwrap();
        assert_eq!(per[1], Some(1.0));
        assert_eq!(per[3], None);
    }

    #[test]
    fn dice_half_overlap() {
        // Class 1 covers pixels 0..4; prediction covers 2..6. Two of four overlap.
        let y = one_hot(&[1, 1, 1, 1, 0, 0, 0, 0], 2, 2, 4);
        let pred = one_hot(&[0, 0, 1, 1, 1, 1, 0, 0], 2, 2, 4);
        let sel = PixelSelection::all(8);
        let per = dice_per_class(&pred, &y, &sel).unwrap();
        assert_eq!(per[1], Some(0.5));
        assert!((dice_loss(&pred, &y, &sel).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dice_literal_two_of_four() {
        // Certainty on two of the four target pixels and nowhere else:
        // 1 - 2*2 / (4 + 2).
        let y = one_hot(&[1, 1, 1, 1], 2, 2, 2);
        let pred = one_hot(&[1, 1, 0, 0], 2, 2, 2);
        let per = dice_per_class(&pred, &y, &PixelSelection::all(4)).unwrap();
        assert!((per[1].unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cce_closed_forms() {
        let y = one_hot(&[0, 1, 2, 3], 4, 2, 2);
        let sel = PixelSelection::all(4);
        assert_eq!(cce_loss(&y, &y, &sel).unwrap(), 0.0);
        let uniform = Tensor::full(&[4, 2, 2], 0.25);
        assert!((cce_loss(&uniform, &y, &sel).unwrap() - 4f64.ln()).abs() < 1e-9);

        let wrong = one_hot(&[1, 1, 2, 3], 4, 2, 2);
        let v = cce_loss(&wrong, &y, &PixelSelection::new(vec![true, false, false, false])).unwrap();
        assert!((v - 27.631021115928547).abs() < 1e-9 && v.is_finite());
    }

    #[test]
    fn supervised_uniform_single_class() {
        let n = 6;
        let y = one_hot(&vec![2; n], 4, 2, 3);
        let uniform = Tensor::full(&[4, 2, 3], 0.25);
        let sel = PixelSelection::all(n);
        let v = supervised_loss(&uniform, &y, &sel).unwrap();
        assert!((v - (0.6 + 4f64.ln())).abs() < 1e-12, "{v}");
        assert_eq!(v, dice_loss(&uniform, &y, &sel).unwrap() + cce_loss(&uniform, &y, &sel).unwrap());
    }

    #[test]
    fn empty_selection_errors() {
        let y = one_hot(&[0, 1], 2, 1, 2);
        let none = PixelSelection::none(2);
        assert!(matches!(dice_loss(&y, &y, &none), Err(Error::EmptySelection(_))));
        assert!(matches!(cce_loss(&y, &y, &none), Err(Error::EmptySelection(_))));
    }

    #[test]
    fn consistency_values() {
        let targets = one_hot(&[0, 1], 4, 1, 2);
        let student = probs(4, 1, 2, &[&[0.5, 0.5, 0.0, 0.0], &[0.1, 0.2, 0.3, 0.4]]);
        let fused = FusedSupervision {
            targets: targets.clone(),
            selection: PixelSelection::new(vec![true, false]),
        };
        assert!((consistency_loss(&student, &fused).unwrap() - 0.125).abs() < 1e-15);

        let empty = FusedSupervision {
            targets: targets.clone(),
            selection: PixelSelection::none(2),
        };
        assert_eq!(consistency_loss(&student, &empty).unwrap(), 0.0);

        let exact = FusedSupervision {
            targets: targets.clone(),
            selection: PixelSelection::all(2),
        };
        assert_eq!(consistency_loss(&targets, &exact).unwrap(), 0.0);
    }

    #[test]
    fn total_weighting() {
        assert_eq!(total_loss(2.0, 1.0, 0.9), 1.9);
        assert_eq!(total_loss(1.7, 0.3, 1.0), 1.7);
        assert_eq!(total_loss(1.7, 0.3, 0.0), 0.3);
    }

    #[test]
    fn loss_gradients_through_softmax_match_finite_differences() {
        let c = 4;
        let (h, w) = (3, 4);
        let logits: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let logits = Tensor::new(&[c, h, w], logits).unwrap();
        let labels = [0u8, 1, 2, 3, 0, 0, 1, 1, 2, 3, 3, 0];
        let target = one_hot(&labels, c, h, w);
        let sel = PixelSelection::new((0..h * w).map(|i| i % 3 != 1).collect());
        let fused = FusedSupervision {
            targets: target.clone(),
            selection: PixelSelection::new((0..h * w).map(|i| i % 2 == 0).collect()),
        };
        let report = finite_diff_check(
            |tape, vars| {
                let p = tape.softmax_channels(vars[0])?;
                let sup = supervised_on_tape(tape, p, &target, &sel, SupervisedWeights::default())?;
                let cons = consistency_on_tape(tape, p, &fused)?;
                total_on_tape(tape, sup, cons, 0.7)
            },
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn tape_values_match_plain_functions() {
        let logits = Tensor::new(&[2, 1, 3], vec![0.3, -1.0, 2.0, 0.1, 0.0, -0.5]).unwrap();
        let p = ops::softmax_channels(&logits).unwrap();
        let target = one_hot(&[0, 1, 1], 2, 1, 3);
        let sel = PixelSelection::all(3);
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let sup = supervised_on_tape(&mut tape, pv, &target, &sel, SupervisedWeights::default()).unwrap();
        assert_eq!(tape.value(sup).item(), supervised_loss(&p, &target, &sel).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex_tensor(c: usize, hw: usize, raw: &[f64]) -> Tensor {
            let logits = Tensor::new(&[c, 1, hw], raw.to_vec()).unwrap();
            ops::softmax_channels(&logits).unwrap()
        }

        proptest! {
            #[test]
            fn unselected_pixels_are_ignored(
                raw in prop::collection::vec(-4.0f64..4.0, 24),
                noise in prop::collection::vec(-4.0f64..4.0, 24),
                labels in prop::collection::vec(0u8..4, 6),
                mask in prop::collection::vec(any::<bool>(), 6),
            ) {
                prop_assume!(mask.iter().any(|&m| m));
                let sel = PixelSelection::new(mask.clone());
                let target = one_hot(&labels, 4, 1, 6);
                let p = simplex_tensor(4, 6, &raw);
                // Perturb every unselected pixel of both prediction and target.
                let mut raw2 = raw.clone();
                let mut target2 = target.clone();
                for px in 0..6 {
                    if !mask[px] {
                        for ch in 0..4 {
                            raw2[ch * 6 + px] = noise[ch * 6 + px];
                            target2.data_mut()[ch * 6 + px] = 0.5;
                        }
                    }
                }
                let p2 = simplex_tensor(4, 6, &raw2);
                prop_assert_eq!(dice_loss(&p, &target, &sel).unwrap(), dice_loss(&p2, &target2, &sel).unwrap());
                prop_assert_eq!(cce_loss(&p, &target, &sel).unwrap(), cce_loss(&p2, &target2, &sel).unwrap());
                let f1 = FusedSupervision { targets: target.clone(), selection: sel.clone() };
                let f2 = FusedSupervision { targets: target2.clone(), selection: sel.clone() };
                prop_assert_eq!(consistency_loss(&p, &f1).unwrap(), consistency_loss(&p2, &f2).unwrap());

                let d = dice_loss(&p, &target, &sel).unwrap();
                prop_assert!((0.0..=1.0).contains(&d));
                prop_assert!(cce_loss(&p, &target, &sel).unwrap() >= 0.0);
            }

            #[test]
            fn total_is_linear(
                s1 in -10.0f64..10.0, c1 in -10.0f64..10.0,
                s2 in -10.0f64..10.0, c2 in -10.0f64..10.0,
                alpha in 0.0f64..=1.0, k in -3.0f64..3.0,
            ) {
                let lhs = total_loss(s1 + k * s2, c1 + k * c2, alpha);
                let rhs = total_loss(s1, c1, alpha) + k * total_loss(s2, c2, alpha);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
        }
    }
}
