"""How the threshold factor trades benign exceedings against detection.

Sweeps the factor in the first attack round of the reference scenario and
prints mean exceedings, the classification boundary and the detection rates.
"""
from deepsight.harness import reference_config, sweep_threshold_factor


def main():
    rows = sweep_threshold_factor(reference_config())
    print("    tf  benign TE  poisoned TE  boundary   TPR   FPR")
    for r in rows:
        print(f"{r['tf']:6.3f}  {r['mean_benign_te']:9.2f}  {r['mean_malicious_te']:11.2f}  "
              f"{r['boundary']:8.2f}  {r['tpr']:4.2f}  {r['fpr']:4.2f}")


if __name__ == "__main__":
    main()
