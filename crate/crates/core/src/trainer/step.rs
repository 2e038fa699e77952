use crate::autograd::{Tape, Var};
use crate::config::{AdversarialForm, GeneratorUpdate, HyperParams};
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, dcd_loss, discriminator_output, per_pixel_distill, perceptual_loss,
    student_objective, total_objective, DcdNets, DcdOptions, LossComponents, LossReport, StudentTerms,
};
use crate::nets::{Binding, Bound};
use crate::tensor::Tensor;

use super::{Models, TrainState};

fn diverged(step: u64, term: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Numerical(_) => Error::Divergence { term: term.to_string(), step },
        other => other,
    }
}

fn finite(v: f64, step: u64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { term: term.to_string(), step })
    }
}

/// One alternation: a discriminator update on real `y`, teacher fakes and
/// weighted student fakes (all detached), then the generator update(s)
/// against the freshly updated discriminator. Returns the step's losses.
pub fn train_step(models: &mut Models, state: &mut TrainState, x: &Tensor, y: &Tensor, hp: &HyperParams, lr: f64) -> Result<LossReport> {
    let step = state.step + 1;
    let (n, _, h, w) = x.dims4()?;
    if y.dims4()? != (n, 3, h, w) {
        return Err(Error::Shape(format!("target batch {:?} does not match input {:?}", y.shape(), x.shape())));
    }

    let mut tape = Tape::new();
    let tb = models.teacher.bind(&mut tape, Binding::Train);
    let sb = models.student.bind(&mut tape, Binding::Train);
    let xv = tape.constant(x.clone());
    let taps = models.taps.generator_taps.clone();
    let (t_out, t_feats) = models.teacher.forward_with_taps(&mut tape, &tb, xv, &taps)?;
    let (s_out, s_feats) = models.student.forward_with_taps(&mut tape, &sb, xv, &taps)?;

    let gan_d = discriminator_update(models, state, y, tape.value(t_out), tape.value(s_out), hp, lr, step)?;

    let teacher_trainable = !models.teacher_frozen();
    let sequential = hp.generator_update == GeneratorUpdate::Sequential;
    let db = models.disc.bind(&mut tape, Binding::Constant);
    let t_adv = if teacher_trainable {
        let (scores, _) = models.disc.forward_with_taps(&mut tape, &db, t_out, &[])?;
        let p = discriminator_output(&mut tape, scores, hp.gan_variant);
        Some(adversarial_g_loss(&mut tape, p, hp.gan_variant).map_err(diverged(step, "gan_g_teacher"))?)
    } else {
        None
    };
    let gan_g_teacher = finite(t_adv.map_or(0.0, |v| tape.value(v).item()), step, "gan_g_teacher")?;

    let mut report = if sequential {
        if let Some(t_adv) = t_adv {
            let grads = tape.backward(t_adv)?;
            let g = tb.grads(&grads, &models.teacher.params);
            state.opt_teacher.begin_step();
            state.opt_teacher.apply("teacher", &mut models.teacher.params, &g, lr)?;
        }
        // the student then distils from the updated teacher
        let mut tape = Tape::new();
        let tb = models.teacher.bind(&mut tape, Binding::Constant);
        let sb = models.student.bind(&mut tape, Binding::Train);
        let xv = tape.constant(x.clone());
        let (t_out, t_feats) = models.teacher.forward_with_taps(&mut tape, &tb, xv, &taps)?;
        let (s_out, s_feats) = models.student.forward_with_taps(&mut tape, &sb, xv, &taps)?;
        let db = models.disc.bind(&mut tape, Binding::Constant);
        let mut branch = StudentBranch::record(&mut tape, models, &db, (t_out, &t_feats), (s_out, &s_feats), hp, step)?;
        let grads = tape.backward(branch.objective)?;
        student_update(models, state, &mut branch, &sb, &grads, lr)?;
        branch.report
    } else {
        let mut branch = StudentBranch::record(&mut tape, models, &db, (t_out, &t_feats), (s_out, &s_feats), hp, step)?;
        let total = match t_adv {
            Some(t) => tape.add(t, branch.objective)?,
            None => branch.objective,
        };
        let grads = tape.backward(total)?;
        if teacher_trainable {
            let g = tb.grads(&grads, &models.teacher.params);
            state.opt_teacher.begin_step();
            state.opt_teacher.apply("teacher", &mut models.teacher.params, &g, lr)?;
        }
        student_update(models, state, &mut branch, &sb, &grads, lr)?;
        branch.report
    };
    report.gan_d = gan_d;
    report.gan_g_teacher = gan_g_teacher;
    state.step = step;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn discriminator_update(
    models: &mut Models,
    state: &mut TrainState,
    y: &Tensor,
    t_fake: &Tensor,
    s_fake: &Tensor,
    hp: &HyperParams,
    lr: f64,
    step: u64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let db = models.disc.bind(&mut tape, Binding::Train);
    let student_weight = match hp.adversarial_form {
        AdversarialForm::Collaborative if hp.losses.gan => hp.lambda_stu,
        _ => 0.0,
    };
    let score = |tape: &mut Tape, img: &Tensor| -> Result<Var> {
        let v = tape.constant(img.clone());
        let (s, _) = models.disc.forward_with_taps(tape, &db, v, &[])?;
        Ok(discriminator_output(tape, s, hp.gan_variant))
    };
    let real = score(&mut tape, y)?;
    let mut fakes = vec![(score(&mut tape, t_fake)?, 1.0)];
    if student_weight != 0.0 {
        fakes.push((score(&mut tape, s_fake)?, student_weight));
    }
    let loss = adversarial_d_loss(&mut tape, real, &fakes, hp.gan_variant).map_err(diverged(step, "gan_d"))?;
    let value = finite(tape.value(loss).item(), step, "gan_d")?;
    let grads = tape.backward(loss)?;
    let g = db.grads(&grads, &models.disc.params);
    state.opt_disc.begin_step();
    state.opt_disc.apply("disc", &mut models.disc.params, &g, lr)?;
    Ok(value)
}

/// The student's terms recorded on a generator tape.
struct StudentBranch {
    objective: Var,
    bank_bound: Bound,
    aligner_bound: Option<Bound>,
    report: LossReport,
}

impl StudentBranch {
    fn record(
        tape: &mut Tape,
        models: &Models,
        disc_bound: &Bound,
        (t_out, t_feats): (Var, &[Var]),
        (s_out, s_feats): (Var, &[Var]),
        hp: &HyperParams,
        step: u64,
    ) -> Result<Self> {
        let literal = hp.teacher_distill_grad;
        let teacher_img = if literal { t_out } else { tape.detach(t_out) };
        let bank_bound = models.student_bank.bind(tape, Binding::Train);
        let aligner_bound = models.aligner.as_ref().map(|a| a.bind(tape, Binding::Train));
        let mut terms = StudentTerms::default();
        let mut parts = LossComponents::default();
        let value = |tape: &Tape, v: Var| tape.value(v).item();

        if hp.losses.gan {
            let (scores, _) = models.disc.forward_with_taps(tape, disc_bound, s_out, &[])?;
            let p = discriminator_output(tape, scores, hp.gan_variant);
            let v = adversarial_g_loss(tape, p, hp.gan_variant).map_err(diverged(step, "gan_g_student"))?;
            parts.gan_g_student = Some(value(tape, v));
            terms.gan = Some(v);
        }
        if hp.losses.per {
            let p = perceptual_loss(
                tape,
                teacher_img,
                s_out,
                &models.extractor,
                &models.taps.extractor_taps,
                hp.lambda_fea,
                hp.lambda_sty,
            )?;
            parts.fea = Some(value(tape, p.fea));
            parts.sty = Some(value(tape, p.sty));
            parts.per = Some(value(tape, p.total));
            terms.per = Some(p.total);
        }
        if hp.losses.dcd {
            let nets = DcdNets {
                teacher_bank: &models.teacher_bank,
                student_bank: &models.student_bank,
                student_bound: &bank_bound,
                disc: &models.disc,
            };
            let opts = DcdOptions {
                d_taps: &models.taps.discriminator_taps,
                target_hw: (models.resolution, models.resolution),
                distance: hp.distance_variant,
                stop_teacher_grad: !literal,
            };
            let v = dcd_loss(tape, t_feats, s_feats, &nets, &opts)?;
            parts.dcd = Some(value(tape, v));
            terms.dcd = Some(v);
        }
        if let (Some(aligner), Some(ab)) = (&models.aligner, &aligner_bound) {
            let teacher: Vec<Var> = t_feats.iter().map(|&f| if literal { f } else { tape.detach(f) }).collect();
            let aligned = s_feats
                .iter()
                .enumerate()
                .map(|(i, &f)| aligner.align(tape, ab, i, f))
                .collect::<Result<Vec<_>>>()?;
            let v = per_pixel_distill(tape, &teacher, &aligned, hp.distance_variant)?;
            parts.fea_dis = Some(value(tape, v));
            terms.fea_dis = Some(v);
        }

        let objective = student_objective(tape, &terms, hp)?;
        let report = total_objective(&parts, hp)?;
        let taped = value(tape, objective);
        if let Some(term) = report.non_finite_term() {
            return Err(Error::Divergence { term: term.to_string(), step });
        }
        if (taped - report.total).abs() > 1e-6 * report.total.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "student objective {taped} does not recombine to {}",
                report.total
            )));
        }
        Ok(Self { objective, bank_bound, aligner_bound, report })
    }
}

fn student_update(
    models: &mut Models,
    state: &mut TrainState,
    branch: &mut StudentBranch,
    student_bound: &Bound,
    grads: &crate::autograd::Grads,
    lr: f64,
) -> Result<()> {
    let gs = student_bound.grads(grads, &models.student.params);
    let gb = branch.bank_bound.grads(grads, &models.student_bank.params);
    state.opt_student.begin_step();
    state.opt_student.apply("student", &mut models.student.params, &gs, lr)?;
    state.opt_student.apply("student_bank", &mut models.student_bank.params, &gb, lr)?;
    if let (Some(aligner), Some(ab)) = (&mut models.aligner, &branch.aligner_bound) {
        let ga = ab.grads(grads, &aligner.params);
        state.opt_student.apply("aligner", &mut aligner.params, &ga, lr)?;
    }
    Ok(())
}
