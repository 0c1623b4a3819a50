"""
Difference and sensor operators
===============================

The solver only touches images through two linear maps and their adjoints:
four directional differences, and a box blur followed by decimation.
"""
import numpy as np

from stfuse.operators import (
    SensorModel, blur_downsample, blur_downsample_adjoint, diff_adjoint, diff_forward,
    power_iteration,
)

rng = np.random.default_rng(0)
img = rng.uniform(size=(3, 16, 16))          # (bands, height, width)

# four difference planes, one per direction
g = diff_forward(img)
print("gradient field shape:", g.shape)

# <Dx, y> == <x, D^T y>
y = rng.standard_normal(g.shape)
print("adjoint mismatch D :", abs(np.vdot(g, y) - np.vdot(img, diff_adjoint(y))))

# with s = 4 every LR pixel is the mean of its 4x4 block
m = SensorModel(window=4, hr_width=16, hr_height=16)
lr = blur_downsample(img, m)
print("LR shape:", lr.shape, " block mean check:", np.isclose(lr[0, 0, 0], img[0, :4, :4].mean()))

z = rng.standard_normal(lr.shape)
print("adjoint mismatch SB:", abs(np.vdot(lr, z) - np.vdot(img, blur_downsample_adjoint(z, m))))

# operator norms behind the stepsizes
print("||D||^2  ~", power_iteration(diff_forward, diff_adjoint, img.shape))
print("||SB||^2 ~", power_iteration(lambda v: blur_downsample(v, m),
                                    lambda v: blur_downsample_adjoint(v, m), img.shape))
