"""How much the sup over paths gains from extra jumps, at high and low temperature.

At small beta the constant path is already optimal; past the transition the
one-jump family lifts phi(0) and a second jump adds little more.

Run:  python3 demos/rsb_envelope.py
"""
from __future__ import annotations

import time

from mattisglass.model import basic_model_spec
from mattisglass.variational import phi_of_x


def main() -> None:
    print("beta   k   phi(0)        path jumps/values                     seconds")
    for beta in (0.5, 1.5):
        spec = basic_model_spec(beta)
        for k in (0, 1, 2):
            start = time.perf_counter()
            res = phi_of_x([0.0], spec, k=k)
            vals = ", ".join(f"{v:.3f}" for v in res.path.values[:, 0, 0])
            zs = ", ".join(f"{z:.3f}" for z in res.path.zetas)
            print(f"{beta:4.1f}   {k}   {res.value:.8f}   zetas=[{zs}] q=[{vals}]   {time.perf_counter() - start:.1f}")


if __name__ == "__main__":
    main()
