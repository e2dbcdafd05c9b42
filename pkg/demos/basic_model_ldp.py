"""Magnetization large deviations in the basic model, exact finite N against the variational rate.

Run:  python3 demos/basic_model_ldp.py [beta] [samples]
"""
from __future__ import annotations

import sys

import numpy as np

from mattisglass.model import basic_model_spec
from mattisglass.oracle import empirical_rate, enumerate_states, finite_free_energy, gibbs_magnetization_dist, sample_disorder
from mattisglass.variational import PhiFunction, conjugate_table, legendre_dual, limit_free_energy, rate_function_J_basic


def main(beta: float = 0.2, samples: int = 20) -> None:
    spec = basic_model_spec(beta)
    phi = PhiFunction(spec)
    table = conjugate_table(phi, spec, n_m=33)
    J = rate_function_J_basic(spec, phi, table, n_m=33)
    sup = J.meta["sup_G_minus_phistar"]
    limit = limit_free_energy(spec.G, spec, phi=phi, table=table).value
    print(f"beta={beta}  t={spec.t:.4f}  phi(0)={phi([0.0]):.6f}  limit free energy={limit:.6f}")
    print(f"most likely |m| = {abs(J.meta['argmax_refined'][0]):.4f}\n")

    print(" N   mean F_N   sup|emp - J| on occupied bins")
    for N in (10, 14, 18):
        fes, rates = [], []
        for s in range(samples):
            smp = sample_disorder(spec, N, s)
            enum = enumerate_states(smp, spec)
            fes.append(finite_free_energy(smp, spec, enum=enum))
            rates.append(empirical_rate(gibbs_magnetization_dist(smp, spec, enum=enum)))
        vals = np.mean([r.values for r in rates], axis=0)
        occ = np.isfinite(vals)
        m = np.mean([np.where(np.isfinite(r.values)[:, None], r.m, 0.0) for r in rates], axis=0)[occ]
        emp = vals[occ] - vals[occ].min()
        var = np.array([-mm[0] ** 2 + legendre_dual(phi, mm, 1.0).value + sup for mm in m])
        print(f"{N:2d}   {np.mean(fes):.5f}   {np.max(np.abs(emp - var)):.4f}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(float(args[0]) if args else 0.2, int(args[1]) if len(args) > 1 else 20)
