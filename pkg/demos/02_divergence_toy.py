"""The energy identities on a 1-D conjugate Gaussian model.

The toy has a N(0, 1) prior and N unit-variance observations, so every
energy has a closed form or a cheap quadrature.
"""
from alphabox.divergences import (Gaussian1D, amari_div, bbalpha_energy_quadrature,
                                  bbalpha_expfam_energy, cavity_beta, cavity_normaliser,
                                  hellinger_sq, kl_div, power_ep_energy, power_ep_fixed_point,
                                  renyi_div, reparametrised_energy, synthetic_toy)

p, q = Gaussian1D(0.0, 1.0), Gaussian1D(1.0, 1.0)
print("Renyi_0.5 =", renyi_div(p, q, 0.5), " KL =", kl_div(p, q))
print("D_0.5 =", amari_div(p, q, 0.5), " 4 Hel^2 =", 4 * hellinger_sq(p, q))

# the energy of q equals a Renyi term plus a local-likelihood term of q_tilde
model = synthetic_toy(10, seed=0)
alpha = 0.5
q_tilde = Gaussian1D(0.3, 0.2)
Zq, q = cavity_normaliser(q_tilde, model.prior, alpha, model.N)
print("energy(q) =", bbalpha_energy_quadrature(model, q, alpha))
print("reparametrised =", reparametrised_energy(model, q_tilde, alpha, "quadrature"))

# as N grows the cavity correction vanishes
for N in (10, 100, 1000, 10000):
    toy = synthetic_toy(N, seed=0)
    post = toy.exact_posterior()
    z, _ = cavity_normaliser(post, toy.prior, alpha, N)
    gap = renyi_div(post, toy.prior, cavity_beta(alpha, N)) - kl_div(post, toy.prior)
    print(f"N={N:<6} |Zq-1|={abs(z - 1):.2e}  R-KL={gap:.2e}")

# tying all power-EP sites gives back the BB-alpha energy
lam0 = model.prior.natural()
lam_q = Gaussian1D(0.4, 0.15).natural()
site = (lam_q - lam0) * (1.0 / model.N)
print("power EP (tied) =", power_ep_energy(model, lam0, [site] * model.N, alpha))
print("BB-alpha        =", bbalpha_expfam_energy(model, lam0, lam_q, alpha))

# power EP is exact on a conjugate model
fixed = power_ep_fixed_point(model, alpha).to_gaussian()
print("fixed point", fixed, "exact", model.exact_posterior())
