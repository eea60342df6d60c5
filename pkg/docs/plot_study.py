"""Plot a study.csv written by ``homogvi study`` (needs matplotlib).

    python3 docs/plot_study.py out/study.csv [-o study.png]
"""

import argparse

import matplotlib.pyplot as plt
import numpy as np


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("-o", "--output", default="study.png")
    args = ap.parse_args()
    data = np.genfromtxt(args.csv, delimiter=",", names=True, skip_header=1)
    eps, err = data["eps"], data["l2_error"]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(eps, err, "o-", label="L2 error")
    ax.loglog(eps, err[0] * eps / eps[0], "k--", lw=0.8, label="slope 1")
    ax.set_xlabel("eps")
    ax.set_ylabel("||u_eps - u_0||")
    ax.invert_xaxis()
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
