"""Watch a constrain-and-scale backdoor land without a defense and bounce off DeepSight.

Runs the reference scenario twice (plain FedAvg, then the full defense) and
prints the round-by-round backdoor accuracy side by side, together with how
well the filter separated poisoned from benign updates.

    python3 demos/01_reference_attack.py
"""
from deepsight.harness import reference_config, run_experiment


def fmt(x):
    return "   -" if x is None else f"{x:4.2f}"


def main():
    cfg = reference_config()
    plain = run_experiment(cfg.replace(**{"defense.mode": "none"}))
    guarded = run_experiment(cfg)

    print("round  attackers | BA fedavg | BA deepsight  MA  PPR  BPR  rejected")
    for a, b in zip(plain, guarded):
        print(f"{a.round:5d}  {b.n_attackers:9d} |   {a.ba:5.3f}   |    {b.ba:5.3f}   "
              f"{b.ma:4.2f} {fmt(b.ppr)} {fmt(b.bpr)}  {b.n_rejected:3d}")

    attack = guarded[cfg.attack_start_round:]
    perfect = sum(r.ppr == 1.0 and r.bpr == 1.0 for r in attack)
    print(f"\nfinal BA without defense {plain[-1].ba:.3f}, with DeepSight {guarded[-1].ba:.3f}")
    print(f"rounds with a perfect filter: {perfect}/{len(attack)}")


if __name__ == "__main__":
    main()
