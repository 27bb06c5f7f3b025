"""A tour of the softmax-gated mixture of experts and its loss functions."""

import numpy as np

from smoge import (MixingMeasure, conditional_density, gate_weights, hellinger_sq_mc, loss_l1, loss_l2,
                   normalize_gating, sample_smoge, translate_gating)

# two linear experts on a 2-d covariate; weights live on the log scale (alpha0)
G_star = MixingMeasure(
    alpha0=[0.3, 0.0],
    alpha1=[[1.5, -1.0], [0.0, 0.0]],
    beta=[[1.0, 2.0, -1.0], [-1.0, -1.0, 1.5]],
    sigma2=[0.5, 0.8],
)
x = np.array([0.2, -0.4])
print("gate weights at x:", gate_weights(G_star, x))
print("density of y=0.5 at x:", conditional_density(G_star, 0.5, x))

# shifting every gating coefficient by the same amount leaves the density alone
H = translate_gating(G_star, 1.0, [0.5, -0.5])
print("same density after translation:", conditional_density(H, 0.5, x))
# ... but the atoms moved, so losses compare normalized measures
print("L1 before normalizing:", loss_l1(H, G_star).total)
print("L1 after normalizing:", loss_l1(normalize_gating(H), normalize_gating(G_star)).total)

data = sample_smoge(G_star, 500, seed=1)
print("simulated", data.n, "rows; first y values", np.round(data.y[:5], 3))

# nudge the second expert's variance and watch the losses respond
for eps in (0.4, 0.1, 0.01):
    G = G_star.replace(sigma2=G_star.sigma2 + [0.0, eps])
    d_h = hellinger_sq_mc(G, G_star, n_mc=100_000, seed=0)
    print(f"eps={eps:<5} L1={loss_l1(G, G_star).total:.4f}  Hellinger^2={d_h.value:.2e} (se {d_h.std_error:.1e})")

# an over-specified fit: the first atom is split in two, so L2 squares the gaps inside that cell
split = MixingMeasure(
    alpha0=[0.3 - np.log(2) + 0.01, 0.3 - np.log(2) - 0.01, 0.0],
    alpha1=[[1.55, -1.0], [1.45, -1.0], [0.0, 0.0]],
    beta=[[1.05, 2.0, -1.0], [0.95, 2.0, -1.0], [-1.0, -1.0, 1.5]],
    sigma2=[0.5, 0.5, 0.8],
)
print("cells:", loss_l2(split, G_star).cells)
print("L1 =", round(loss_l1(split, G_star).total, 4), " L2 =", round(loss_l2(split, G_star).total, 4))
