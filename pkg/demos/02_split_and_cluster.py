"""How the unlabeled batch is carved up: old/new splitting, then clustering.

This demo zooms into the two middle stages of the pipeline. Classes are
generated with low separation (4 instead of 10) so the simple threshold
split makes visible mistakes that the trained splitter then repairs.

Run:  python demos/02_split_and_cluster.py
"""

import numpy as np

from catdisc import (ApConfig, PaHyperparams, ScenarioConfig, build_scenario,
                     embed_batch, fine_split, generate_synthetic, label_new,
                     train_initial)


def main():
    seed = 2
    print("Generating 13 low-separation Gaussian classes (hard case) ...")
    src = generate_synthetic(n_classes=13, per_class=100, d_in=32,
                             separation=4.0, seed=seed)
    steps = build_scenario(src, ScenarioConfig(old_class_fraction=10 / 13,
                                               old_sample_carryover=0.2, seed=seed))

    hp = PaHyperparams(d_emb=64, epochs=60, lr_model=1e-2, delta=0.8, lr_decay_every=10)
    print("Training the projection head on the 10 labeled classes ...")
    head, bank, _ = train_initial(steps[0], hp, seed)

    Z, _ = embed_batch(head, steps[1].train.features.astype(np.float64))
    truth_new = (steps[1].holdout_truth >= 10).astype(int)

    print("\nStage 1 — splitting the unlabeled batch into old vs new:")
    dec = fine_split(Z, bank, seed=seed, epsilon="midrange", epochs=40, lr=1e-2)
    init = np.array([d.initial_label for d in dec])
    final = np.array([d.final_label for d in dec])
    print(f"  threshold-only split accuracy : {(init == truth_new).mean():.3f}")
    print(f"  trained fine-split accuracy   : {(final == truth_new).mean():.3f}")
    print("  The splitter fits a mixture to the score histogram, picks the")
    print("  confidently-old and confidently-new samples as a clean training")
    print("  set, and learns a small classifier that sharpens the boundary.")

    print("\nStage 2 — clustering the new side to count and label novel classes:")
    new_idx = np.flatnonzero(final == 1)
    entries, k, centroids, info = label_new(new_idx, Z, ApConfig(preference=-16.0),
                                            existing_class_count=10)
    print(f"  estimated novel classes: {k} (truth: 3), converged={info['converged']}")
    sizes = np.bincount([e.pseudo_label - 10 for e in entries], minlength=k)
    print(f"  cluster sizes: {sizes.tolist()}")
    print("  At this low separation the split boundary leaks some old samples")
    print("  into the new side, so the count can be off by one; at the default")
    print("  separation of 10 the pipeline recovers exactly 3 (see demo 01).")
    print("  Each cluster centroid becomes a proxy for a brand-new class id,")
    print("  so the next training round treats discovered classes like any other.")


if __name__ == "__main__":
    main()
