"""Distillation losses for image translation.

The transfer signal is a pairwise-similarity matrix over encoder activations:
flatten a (1, C, H, W) feature map to columns, form the P x P Gram matrix of
pixel positions (P = H*W), and L2-normalize its rows. Teacher and student
encode the same real input, and the student is penalized for the mean
absolute difference between the two matrices. Because the matrix lives in
position space, teacher and student may have different channel widths; only
the tap's spatial grid must agree.

Adversarial terms are least-squares (target 1 for real, 0 for fake).
Reconstruction terms blend ground-truth against teacher outputs with weight
alpha on ground truth. There is no identity term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .models import Model
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class DistillConfig:
    """Weights for the distillation objective.

    gamma_a / gamma_b weight the similarity terms per direction (paired
    translation uses gamma_a only). alpha weights ground truth against the
    teacher's output in the reconstruction blend; alpha = 1 disables the
    teacher entirely. cycle_weight is the multiplier on the reconstruction
    blend. Layer names default to each model's declared tap.
    """

    gamma_a: float = 0.5
    gamma_b: float = 0.5
    alpha: float = 0.05
    cycle_weight: float = 10.0
    teacher_layer: str | None = None
    student_layer: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma_a < 0.0 or self.gamma_b < 0.0:
            raise ValueError("gamma weights must be >= 0")
        if self.cycle_weight < 0.0:
            raise ValueError("cycle_weight must be >= 0")


@dataclass
class FeatureEncoding:
    """A (C, P) view of a single sample's feature map, P = H*W."""

    values: Tensor
    grid: tuple[int, int]
    channels: int


@dataclass
class ActivationMatrix:
    """Row-normalized P x P similarity matrix plus its source grid."""

    values: Tensor
    grid: tuple[int, int]
    channels: int


def flatten_features(feat: Tensor) -> FeatureEncoding:
    if feat.data.ndim != 4:
        raise ShapeError(f"expected NCHW features, got shape {feat.shape}")
    n, c, h, w = feat.shape
    if n != 1:
        raise ShapeError(f"similarity matrices are per sample; got batch {n}")
    return FeatureEncoding(T.reshape(feat, (c, h * w)), (h, w), c)


def semrel_matrix(feat: Tensor) -> ActivationMatrix:
    """Row-normalized Gram matrix over pixel positions of one feature map."""
    enc = flatten_features(feat)
    raw = T.matmul(T.transpose2d(enc.values), enc.values)
    return ActivationMatrix(T.row_l2_normalize(raw), enc.grid, enc.channels)


def sp_loss(teacher: ActivationMatrix, student: ActivationMatrix) -> Tensor:
    """Mean absolute difference between two activation matrices."""
    if teacher.values.shape != student.values.shape:
        th, tw = teacher.grid
        sh, sw = student.grid
        raise ShapeError(
            f"similarity grids differ: teacher {th}x{tw} "
            f"(P={th * tw}) vs student {sh}x{sw} (P={sh * sw}); "
            f"choose taps with matching spatial size"
        )
    return T.abs_mean(teacher.values, student.values)


def adversarial_loss(scores: Tensor, target_is_real: bool) -> Tensor:
    """Least-squares GAN loss against a constant 1 (real) or 0 (fake)."""
    fill = 1.0 if target_is_real else 0.0
    target = Tensor(np.full(scores.shape, fill, dtype=scores.data.dtype))
    return T.square_mean(scores, target)


def vanilla_kd_cycle(real: Tensor, teacher_rec: Tensor, student_rec: Tensor,
                     alpha: float) -> Tensor:
    """Blend of L1 to ground truth and L1 to the teacher's reconstruction."""
    gt = T.abs_mean(student_rec, real)
    kd = T.abs_mean(student_rec, teacher_rec)
    return T.add(T.scale(gt, alpha), T.scale(kd, 1.0 - alpha))


def discriminator_loss(disc: Model, real: Tensor, fake: Tensor) -> Tensor:
    """Halved sum of real and fake least-squares terms."""
    loss_real = adversarial_loss(disc.forward(real), True)
    loss_fake = adversarial_loss(disc.forward(fake), False)
    return T.scale(T.add(loss_real, loss_fake), 0.5)


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.data.dtype))


@dataclass
class CycleTerms:
    """Generator-side terms of the cycle objective, unweighted where named."""

    gan_a: Tensor
    gan_b: Tensor
    sp_a: Tensor
    sp_b: Tensor
    cyc_gt: Tensor
    cyc_kd: Tensor
    total: Tensor
    fake_x: Tensor
    fake_y: Tensor

    def scalars(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data)
                for k in ("gan_a", "gan_b", "sp_a", "sp_b",
                          "cyc_gt", "cyc_kd", "total")}


def full_cycle_objective(g_a: Model, g_b: Model, d_a: Model, d_b: Model,
                         x: Tensor, y: Tensor, cfg: DistillConfig,
                         teacher_a: Model | None = None,
                         teacher_b: Model | None = None) -> CycleTerms:
    """Generator losses for one unpaired step.

    Direction A maps x into y's domain (judged by d_a), direction B the
    reverse. Teachers, when present, supply similarity targets from the same
    real inputs and reconstruction targets through their own cycle. Teacher
    passes are skipped entirely when alpha = 1 and both gammas are 0, so a
    run with those settings is identical to training without a teacher.
    """
    use_kd = cfg.alpha != 1.0
    use_sp_a = cfg.gamma_a != 0.0
    use_sp_b = cfg.gamma_b != 0.0
    if (use_kd or use_sp_a or use_sp_b) and (teacher_a is None or teacher_b is None):
        raise ValueError("teachers required when alpha < 1 or a gamma is nonzero")

    if use_sp_a:
        feat_a, fake_y = g_a.forward_split(x, cfg.student_layer)
        tfeat_a, fake_y_t = teacher_a.forward_split(x, cfg.teacher_layer)
        sp_a = sp_loss(semrel_matrix(tfeat_a), semrel_matrix(feat_a))
    else:
        fake_y = g_a.forward(x)
        fake_y_t = teacher_a.forward(x) if use_kd else None
        sp_a = _zero(x)

    if use_sp_b:
        feat_b, fake_x = g_b.forward_split(y, cfg.student_layer)
        tfeat_b, fake_x_t = teacher_b.forward_split(y, cfg.teacher_layer)
        sp_b = sp_loss(semrel_matrix(tfeat_b), semrel_matrix(feat_b))
    else:
        fake_x = g_b.forward(y)
        fake_x_t = teacher_b.forward(y) if use_kd else None
        sp_b = _zero(x)

    gan_a = adversarial_loss(d_a.forward(fake_y), True)
    gan_b = adversarial_loss(d_b.forward(fake_x), True)

    rec_x = g_b.forward(fake_y)
    rec_y = g_a.forward(fake_x)
    cyc_gt = T.add(T.abs_mean(rec_x, x), T.abs_mean(rec_y, y))
    if use_kd:
        rec_x_t = teacher_b.forward(fake_y_t)
        rec_y_t = teacher_a.forward(fake_x_t)
        cyc_kd = T.add(T.abs_mean(rec_x, rec_x_t), T.abs_mean(rec_y, rec_y_t))
        cycle = T.add(T.scale(cyc_gt, cfg.cycle_weight * cfg.alpha),
                      T.scale(cyc_kd, cfg.cycle_weight * (1.0 - cfg.alpha)))
    else:
        cyc_kd = _zero(x)
        cycle = T.scale(cyc_gt, cfg.cycle_weight)

    total = T.add(gan_a, gan_b)
    if use_sp_a:
        total = T.add(total, T.scale(sp_a, cfg.gamma_a))
    if use_sp_b:
        total = T.add(total, T.scale(sp_b, cfg.gamma_b))
    total = T.add(total, cycle)
    return CycleTerms(gan_a, gan_b, sp_a, sp_b, cyc_gt, cyc_kd, total,
                      fake_x, fake_y)


@dataclass
class PairedTerms:
    """Generator-side terms of the paired objective."""

    gan: Tensor
    sp: Tensor
    l1_gt: Tensor
    l1_kd: Tensor
    total: Tensor
    fake: Tensor

    def scalars(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data)
                for k in ("gan", "sp", "l1_gt", "l1_kd", "total")}


def paired_objective(gen: Model, disc: Model, x: Tensor, y: Tensor,
                     cfg: DistillConfig, teacher: Model | None = None
                     ) -> PairedTerms:
    """Generator losses for one paired step.

    The discriminator is conditional: it scores the input concatenated with
    the (real or generated) output. gamma_a weights the similarity term.
    """
    use_kd = cfg.alpha != 1.0
    use_sp = cfg.gamma_a != 0.0
    if (use_kd or use_sp) and teacher is None:
        raise ValueError("teacher required when alpha < 1 or gamma is nonzero")

    if use_sp:
        feat_s, fake = gen.forward_split(x, cfg.student_layer)
        feat_t, y_t = teacher.forward_split(x, cfg.teacher_layer)
        sp = sp_loss(semrel_matrix(feat_t), semrel_matrix(feat_s))
    else:
        fake = gen.forward(x)
        y_t = teacher.forward(x) if use_kd else None
        sp = _zero(x)

    gan = adversarial_loss(disc.forward(T.concat([x, fake], axis=1)), True)
    l1_gt = T.abs_mean(fake, y)
    if use_kd:
        l1_kd = T.abs_mean(fake, y_t)
        recon = T.add(T.scale(l1_gt, cfg.cycle_weight * cfg.alpha),
                      T.scale(l1_kd, cfg.cycle_weight * (1.0 - cfg.alpha)))
    else:
        l1_kd = _zero(x)
        recon = T.scale(l1_gt, cfg.cycle_weight)

    total = gan
    if use_sp:
        total = T.add(total, T.scale(sp, cfg.gamma_a))
    total = T.add(total, recon)
    return PairedTerms(gan, sp, l1_gt, l1_kd, total, fake)
