"""Scaled parameters for the GaAs device constants, and the tau threshold against p."""
import argparse

import numpy as np

from spindd.params import GAAS_50K, check_tau_condition, scale


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--p", type=float, default=0.5)
    args = ap.parse_args()

    rep = scale(GAAS_50K, p=args.p, gamma=1.0)
    for name, value in rep.lines():
        print(f"{name:>14} = {value}")

    print("\n      p        eta  threshold  verdict")
    for p in np.r_[np.linspace(0.0, 0.9, 10), 0.95, 0.99, 0.993, 0.995]:
        sp = scale(GAAS_50K, p=p, gamma=1.0).params
        cond = check_tau_condition(sp, 1.0)
        verdict = "satisfied" if cond.satisfied else "violated"
        print(f"  {p:6.3f}  {sp.eta:8.4f}  {cond.threshold:9.4f}  {verdict}")


if __name__ == "__main__":
    main()
