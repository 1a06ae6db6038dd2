"""Why homogeneous training data gives itself away in the output layer.

Trains one benign client and one client whose data is half backdoor samples
from the same global model, then prints the per-class NEUPs and the
threshold exceedings. The poisoned update concentrates its energy on the
backdoor target, so few classes exceed the threshold.

Scaling an update leaves both numbers unchanged; the last lines check that.
"""
import numpy as np

from deepsight.data import FederationSpec, make_federation, make_triggers, poison
from deepsight.features import neups, threshold_exceedings, update_energy
from deepsight.nn import ModelParams, TrainConfig, apply_scaled, diff, train_local


def main():
    spec = FederationSpec(n_clients=4, pmr=0.25, rng_seed=0)
    clients = make_federation(spec)
    trigger = make_triggers(spec)[0]
    g = ModelParams.init([spec.in_dim, 32, 32, spec.n_classes], seed=0)
    for r in range(5):  # common pre-training, as in the benign rounds
        for c in clients:
            g = train_local(g, c, TrainConfig(epochs=5), seed=[1, r])

    benign = train_local(g, clients[1], TrainConfig(epochs=5), seed=2)
    poisoned = train_local(g, poison(clients[0], trigger, 0.5, seed=3),
                           TrainConfig(learning_rate=0.01, epochs=10), seed=2)

    np.set_printoptions(precision=3, suppress=True)
    for name, local in (("benign", benign), ("poisoned", poisoned)):
        c = neups(update_energy(g, local))
        print(f"{name:9s} NEUPs {c}  TE = {threshold_exceedings(c)}")
    print(f"backdoor target class: {trigger.target}")

    scaled = apply_scaled(g, diff(poisoned, g), -1e3)
    same = np.allclose(neups(update_energy(g, scaled)), neups(update_energy(g, poisoned)), atol=1e-9)
    print(f"NEUPs unchanged after scaling the poisoned update by -1000: {same}")


if __name__ == "__main__":
    main()
