"""Which defense layer does the work? Final BA per layer and attack strength.

Clipping alone bounds how far any one update can move the model. It does
not stop attackers who already stay within the median norm. Filtering removes
the poisoned updates outright, and on this desk-scale task it catches them even
at PDR 0.05. Takes about a minute.
"""
from deepsight.harness import ablate, reference_config


def main():
    rows = ablate(reference_config(), complexities=(1,), pdrs=(0.05, 0.5))
    print("  pdr  mode            BA     MA")
    for r in rows:
        print(f"{r['pdr']:5.2f}  {r['mode']:14s} {r['ba']:5.3f}  {r['ma']:5.3f}")


if __name__ == "__main__":
    main()
