"""
Block masking and the EMA teacher
=================================

The self-distillation objective needs two ingredients demonstrated here:

1. Block masking: the input image is divided into square blocks and half
   of them are zeroed. The student sees the masked image; the teacher
   sees the original.
2. The teacher: an architecturally identical copy of the student whose
   weights follow an exponential moving average tau*teacher +
   (1-tau)*student. It produces regression targets and receives no
   gradients.
"""

import numpy as np

from binimage.ema import EmaConfig, ema_update, init_teacher
from binimage.losses import data2vec_loss
from binimage.masking import MaskConfig, apply_mask, generate_mask
from binimage.model import ModelConfig, encoder_forward, init_model

rng = np.random.default_rng(0)

# --- masking -----------------------------------------------------------
config = MaskConfig(block_size=16, mask_ratio=0.5, image_size=400)
print(
    f"grid: {config.grid_size}x{config.grid_size} blocks of "
    f"{config.block_size}px, masking {config.masked_blocks} of {config.total_blocks}"
)

image = rng.random((400, 400))
mask = generate_mask(config, rng)
masked = apply_mask(image, mask)
zeroed = int((masked == 0.0).sum() - (image == 0.0).sum())
print(f"zeroed pixels: {zeroed} = {config.masked_blocks} blocks x {config.block_size}^2")

# --- teacher updates ----------------------------------------------------
# A small model keeps the demo fast; the mechanics are scale-free.
model_config = ModelConfig(
    input_size=20, families=3, dropout_rate=0.0, same_channels=(4,),
    valid_channels=(8,), embed_channels=8, mlp_width=16, mlp_blocks=1,
)
student = init_model(model_config, seed=0)
teacher = init_teacher(student)

# At initialization the teacher equals the student, so the embedding loss
# on the UNMASKED input is exactly zero.
x = rng.random((2, 20, 20)).astype(np.float32)
student_emb = encoder_forward(student, x, "eval")
teacher_emb = encoder_forward(teacher.params, x, "eval")
print(f"initial data2vec loss (unmasked): {data2vec_loss(student_emb, teacher_emb):.6f}")

# Perturb the student as if an optimizer step had run, then apply the EMA.
for name, tensor in student.tensors().items():
    tensor += 0.01 * rng.standard_normal(tensor.shape).astype(tensor.dtype)

ema = EmaConfig(tau=0.9)
before = teacher.params.tensors()["embed/W"].copy()
ema_update(teacher, student, ema)
after = teacher.params.tensors()["embed/W"]
moved = np.abs(after - before).max()
print(f"tau=0.9 EMA step moved teacher weights by at most {moved:.6f}")

# The teacher lags the student: with tau=0.9 it closes 10% of the gap
# per step, so after k steps the remaining gap is 0.9^k.
gap0 = np.abs(student.tensors()["embed/W"] - before).max()
for k in range(1, 4):
    ema_update(teacher, student, ema)
gap = np.abs(student.tensors()["embed/W"] - teacher.params.tensors()["embed/W"]).max()
print(f"gap after 4 EMA steps: {gap:.6f} (= 0.9^4 x {gap0:.6f})")

# Masked student vs unmasked teacher is what the training loss compares.
masked_x = np.stack(
    [apply_mask(xi, generate_mask(MaskConfig(4, 0.5, 20), rng)) for xi in x]
)
loss = data2vec_loss(encoder_forward(student, masked_x, "eval"), teacher_emb)
print(f"data2vec loss, masked student vs teacher: {loss:.6f}")
