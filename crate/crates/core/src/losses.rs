//! Training objectives: adversarial (plain and collaborative), per-pixel
//! feature distillation, perceptual (feature reconstruction + Gram style),
//! discriminator-cooperated distillation, and the assembled student
//! objective. Every loss is a scalar node on a [`Tape`].

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::config::{DistanceVariant, GanVariant, HyperParams};
use crate::error::{Error, Result};
use crate::nets::{Binding, Bound, Discriminator, DownsamplerBank, FeatureExtractor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

fn check_finite(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} contains NaN or infinity")))
    }
}

/// Maps raw discriminator scores to what the adversarial losses consume:
/// probabilities for the log-likelihood variants, raw scores for least
/// squares.
pub fn discriminator_output(tape: &mut Tape, scores: Var, variant: GanVariant) -> Var {
    match variant {
        GanVariant::Vanilla | GanVariant::Nonsaturating => tape.sigmoid(scores),
        GanVariant::LeastSquares => scores,
    }
}

fn mean_log(tape: &mut Tape, p: Var) -> Var {
    let c = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = tape.log(c);
    tape.mean(l)
}

fn mean_log_one_minus(tape: &mut Tape, p: Var) -> Var {
    let c = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = tape.scale(c, -1.0);
    let q = tape.add_scalar(q, 1.0);
    let l = tape.log(q);
    tape.mean(l)
}

fn mean_sq_offset(tape: &mut Tape, s: Var, target: f64) -> Var {
    let d = tape.add_scalar(s, -target);
    let d = tape.square(d);
    tape.mean(d)
}

/// Discriminator loss to minimize. With one unit-weight fake this is the
/// negated two-player objective; with `[(teacher, 1), (student, λ_stu)]` it
/// is the collaborative one. Zero-weight fakes are skipped entirely.
pub fn adversarial_d_loss(tape: &mut Tape, d_real: Var, d_fakes: &[(Var, f64)], variant: GanVariant) -> Result<Var> {
    check_finite(tape, d_real, "real scores")?;
    for (i, (f, w)) in d_fakes.iter().enumerate() {
        check_finite(tape, *f, &format!("fake scores {i}"))?;
        if !(w.is_finite() && *w >= 0.0) {
            return Err(Error::Config(format!("fake weight {w} must be finite and >= 0")));
        }
    }
    let mut total = match variant {
        GanVariant::Vanilla | GanVariant::Nonsaturating => {
            let r = mean_log(tape, d_real);
            tape.scale(r, -1.0)
        }
        GanVariant::LeastSquares => mean_sq_offset(tape, d_real, 1.0),
    };
    for &(fake, weight) in d_fakes.iter().filter(|(_, w)| *w != 0.0) {
        let term = match variant {
            GanVariant::Vanilla | GanVariant::Nonsaturating => {
                let t = mean_log_one_minus(tape, fake);
                tape.scale(t, -weight)
            }
            GanVariant::LeastSquares => {
                let t = mean_sq_offset(tape, fake, 0.0);
                tape.scale(t, weight)
            }
        };
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Generator loss to minimize against a fixed discriminator.
pub fn adversarial_g_loss(tape: &mut Tape, d_fake: Var, variant: GanVariant) -> Result<Var> {
    check_finite(tape, d_fake, "fake scores")?;
    Ok(match variant {
        GanVariant::Vanilla => mean_log_one_minus(tape, d_fake),
        GanVariant::Nonsaturating => {
            let l = mean_log(tape, d_fake);
            tape.scale(l, -1.0)
        }
        GanVariant::LeastSquares => mean_sq_offset(tape, d_fake, 1.0),
    })
}

/// Mean elementwise distance between equally shaped arrays.
pub fn distance(tape: &mut Tape, a: Var, b: Var, variant: DistanceVariant) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d = match variant {
        DistanceVariant::L1 => tape.abs(d),
        DistanceVariant::L2 => tape.square(d),
    };
    Ok(tape.mean(d))
}

fn check_tap_shapes(tape: &Tape, a: &[Var], b: &[Var], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "{what}: {} teacher taps vs {} student taps",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if tape.value(*x).shape() != tape.value(*y).shape() {
            return Err(Error::Config(format!(
                "{what}: tap {i} shapes differ ({:?} vs {:?})",
                tape.value(*x).shape(),
                tape.value(*y).shape()
            )));
        }
    }
    Ok(())
}

fn sum_terms(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = match it.next() {
        Some(v) => v,
        None => return Ok(tape.constant(crate::tensor::Tensor::scalar(0.0))),
    };
    it.try_fold(first, |acc, t| tape.add(acc, t))
}

/// Per-pixel feature distillation: sum over taps of the mean distance
/// between teacher features and channel-aligned student features.
pub fn per_pixel_distill(tape: &mut Tape, teacher_feats: &[Var], student_projected: &[Var], variant: DistanceVariant) -> Result<Var> {
    check_tap_shapes(tape, teacher_feats, student_projected, "per_pixel_distill")?;
    let terms = teacher_feats
        .iter()
        .zip(student_projected)
        .map(|(t, s)| distance(tape, *t, *s, variant))
        .collect::<Result<Vec<_>>>()?;
    sum_terms(tape, terms)
}

/// Per-sample `C x C` Gram matrices normalized by `C H W`.
pub fn gram(tape: &mut Tape, feat: Var) -> Result<Var> {
    tape.gram(feat)
}

/// Sum over taps of the entrywise L1 distance between Gram matrices,
/// averaged over the batch.
pub fn style_loss(tape: &mut Tape, t_feats: &[Var], s_feats: &[Var]) -> Result<Var> {
    check_tap_shapes(tape, t_feats, s_feats, "style_loss")?;
    let mut terms = Vec::with_capacity(t_feats.len());
    for (t, s) in t_feats.iter().zip(s_feats) {
        let n = tape.value(*t).shape()[0] as f64;
        let gt = tape.gram(*t)?;
        let gs = tape.gram(*s)?;
        let d = tape.sub(gt, gs)?;
        let d = tape.abs(d);
        let d = tape.sum(d);
        terms.push(tape.scale(d, 1.0 / n));
    }
    sum_terms(tape, terms)
}

/// Sum over taps of the L1 distance normalized by `C_j H_j W_j`, averaged
/// over the batch, i.e. the mean absolute difference per tap.
pub fn feature_reconstruction_loss(tape: &mut Tape, t_feats: &[Var], s_feats: &[Var]) -> Result<Var> {
    check_tap_shapes(tape, t_feats, s_feats, "feature_reconstruction_loss")?;
    let terms = t_feats
        .iter()
        .zip(s_feats)
        .map(|(t, s)| distance(tape, *t, *s, DistanceVariant::L1))
        .collect::<Result<Vec<_>>>()?;
    sum_terms(tape, terms)
}

#[derive(Clone, Copy, Debug)]
pub struct PerceptualParts {
    pub total: Var,
    pub fea: Var,
    pub sty: Var,
}

/// `λ_fea · L_fea + λ_sty · L_sty` on extractor activations of both images.
pub fn perceptual_loss(
    tape: &mut Tape,
    t_img: Var,
    s_img: Var,
    extractor: &FeatureExtractor,
    taps: &[usize],
    lambda_fea: f64,
    lambda_sty: f64,
) -> Result<PerceptualParts> {
    let (ts, ss) = (tape.value(t_img).shape(), tape.value(s_img).shape());
    if ts != ss {
        return Err(Error::Shape(format!("perceptual_loss: image shapes {ts:?} and {ss:?} differ")));
    }
    let tf = extractor.forward_with_taps(tape, t_img, taps)?;
    let sf = extractor.forward_with_taps(tape, s_img, taps)?;
    let fea = feature_reconstruction_loss(tape, &tf, &sf)?;
    let sty = style_loss(tape, &tf, &sf)?;
    let a = tape.scale(fea, lambda_fea);
    let b = tape.scale(sty, lambda_sty);
    let total = tape.add(a, b)?;
    Ok(PerceptualParts { total, fea, sty })
}

/// Networks taking part in the discriminator-cooperated distillation loss.
pub struct DcdNets<'a> {
    /// Frozen; bound as constants internally.
    pub teacher_bank: &'a DownsamplerBank,
    pub student_bank: &'a DownsamplerBank,
    /// Binding of `student_bank` on the same tape; gradients land here.
    pub student_bound: &'a Bound,
    /// Bound as constants internally: never receives a gradient here.
    pub disc: &'a Discriminator,
}

#[derive(Clone, Copy, Debug)]
pub struct DcdOptions<'a> {
    pub d_taps: &'a [usize],
    /// Spatial size feature-images are resized to before entering `disc`.
    pub target_hw: (usize, usize),
    pub distance: DistanceVariant,
    /// Stop gradients on the teacher branch (default). `false` lets them
    /// reach the teacher features.
    pub stop_teacher_grad: bool,
}

/// Sum over discriminator taps `k` and generator taps `i` of the distance
/// between `D_k(f_T(G_i^T(x)))` and `D_k(f_S(G_i^S(x)))`.
pub fn dcd_loss(tape: &mut Tape, teacher_feats: &[Var], student_feats: &[Var], nets: &DcdNets<'_>, opts: &DcdOptions<'_>) -> Result<Var> {
    if teacher_feats.len() != student_feats.len() {
        return Err(Error::Config(format!(
            "dcd_loss: {} teacher taps vs {} student taps",
            teacher_feats.len(),
            student_feats.len()
        )));
    }
    for (which, bank) in [("teacher", nets.teacher_bank), ("student", nets.student_bank)] {
        if bank.channels.len() != teacher_feats.len() {
            return Err(Error::Config(format!(
                "dcd_loss: {which} bank has {} projections for {} taps",
                bank.channels.len(),
                teacher_feats.len()
            )));
        }
    }
    let teacher_bound = nets.teacher_bank.bind(tape, Binding::Constant);
    let disc_bound = nets.disc.bind(tape, Binding::Constant);
    let mut terms = Vec::with_capacity(teacher_feats.len() * opts.d_taps.len());
    for (i, (&tf, &sf)) in teacher_feats.iter().zip(student_feats).enumerate() {
        let tf = if opts.stop_teacher_grad { tape.detach(tf) } else { tf };
        let t_img = nets.teacher_bank.project(tape, &teacher_bound, i, tf, opts.target_hw)?;
        let s_img = nets.student_bank.project(tape, nets.student_bound, i, sf, opts.target_hw)?;
        let t_resp = nets.disc.features(tape, &disc_bound, t_img, opts.d_taps)?;
        let s_resp = nets.disc.features(tape, &disc_bound, s_img, opts.d_taps)?;
        for (t, s) in t_resp.into_iter().zip(s_resp) {
            terms.push(distance(tape, t, s, opts.distance)?);
        }
    }
    sum_terms(tape, terms)
}

/// Per-step loss values. `total` is the student generator's objective.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_d: f64,
    pub gan_g_teacher: f64,
    pub gan_g_student: f64,
    pub fea_dis: f64,
    pub fea: f64,
    pub sty: f64,
    pub per: f64,
    pub dcd: f64,
    pub total: f64,
}

impl LossReport {
    pub fn entries(&self) -> [(&'static str, f64); 9] {
        [
            ("gan_d", self.gan_d),
            ("gan_g_teacher", self.gan_g_teacher),
            ("gan_g_student", self.gan_g_student),
            ("fea_dis", self.fea_dis),
            ("fea", self.fea),
            ("sty", self.sty),
            ("per", self.per),
            ("dcd", self.dcd),
            ("total", self.total),
        ]
    }

    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.entries().into_iter().find(|(_, v)| !v.is_finite()).map(|(k, _)| k)
    }
}

/// Raw component values; `None` marks a term that was not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub gan_d: Option<f64>,
    pub gan_g_teacher: Option<f64>,
    pub gan_g_student: Option<f64>,
    pub fea_dis: Option<f64>,
    pub fea: Option<f64>,
    pub sty: Option<f64>,
    pub per: Option<f64>,
    pub dcd: Option<f64>,
}

/// Weight of each student term under `hp`, zero for disabled terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentWeights {
    pub gan: f64,
    pub per: f64,
    pub dcd: f64,
    pub fea_dis: f64,
}

impl StudentWeights {
    pub fn from_hp(hp: &HyperParams) -> Self {
        let on = |flag: bool, w: f64| if flag { w } else { 0.0 };
        Self {
            gan: on(hp.losses.gan, hp.lambda_stu),
            per: on(hp.losses.per, 1.0),
            dcd: on(hp.losses.dcd, hp.lambda_dcd),
            fea_dis: on(hp.losses.fea_dis, hp.lambda_fea_dis),
        }
    }
}

/// Assembles the student generator objective
/// `λ_stu · L_adv + L_per + λ_dcd · L_dcd (+ λ_fea_dis · L_fea_dis)` from
/// scalar components, and passes the teacher and discriminator terms
/// through. Enabled terms must be present.
pub fn total_objective(parts: &LossComponents, hp: &HyperParams) -> Result<LossReport> {
    let w = StudentWeights::from_hp(hp);
    let need = |v: Option<f64>, name: &str, enabled: bool| -> Result<f64> {
        match (v, enabled) {
            (Some(v), _) => Ok(v),
            (None, false) => Ok(0.0),
            (None, true) => Err(Error::Config(format!("missing loss component `{name}`"))),
        }
    };
    let gan_g_student = need(parts.gan_g_student, "gan_g_student", hp.losses.gan)?;
    let dcd = need(parts.dcd, "dcd", hp.losses.dcd)?;
    let fea_dis = need(parts.fea_dis, "fea_dis", hp.losses.fea_dis)?;
    let fea = parts.fea.unwrap_or(0.0);
    let sty = parts.sty.unwrap_or(0.0);
    let per = match parts.per {
        Some(p) => p,
        None if parts.fea.is_some() || parts.sty.is_some() => hp.lambda_fea * fea + hp.lambda_sty * sty,
        None => need(None, "per", hp.losses.per)?,
    };
    let total = w.gan * gan_g_student + w.per * per + w.dcd * dcd + w.fea_dis * fea_dis;
    Ok(LossReport {
        gan_d: parts.gan_d.unwrap_or(0.0),
        gan_g_teacher: parts.gan_g_teacher.unwrap_or(0.0),
        gan_g_student,
        fea_dis,
        fea,
        sty,
        per,
        dcd,
        total,
    })
}

/// Student terms recorded on a tape.
#[derive(Clone, Copy, Debug, Default)]
pub struct StudentTerms {
    pub gan: Option<Var>,
    pub per: Option<Var>,
    pub dcd: Option<Var>,
    pub fea_dis: Option<Var>,
}

/// Tape-level counterpart of [`total_objective`] for the student.
pub fn student_objective(tape: &mut Tape, terms: &StudentTerms, hp: &HyperParams) -> Result<Var> {
    let w = StudentWeights::from_hp(hp);
    let mut parts = Vec::new();
    for (term, weight, name) in [
        (terms.gan, w.gan, "gan"),
        (terms.per, w.per, "per"),
        (terms.dcd, w.dcd, "dcd"),
        (terms.fea_dis, w.fea_dis, "fea_dis"),
    ] {
        match term {
            Some(v) if weight != 0.0 => parts.push(tape.scale(v, weight)),
            None if weight != 0.0 => return Err(Error::Config(format!("missing loss component `{name}`"))),
            _ => {}
        }
    }
    sum_terms(tape, parts)
}

#[cfg(test)]
mod tests;
