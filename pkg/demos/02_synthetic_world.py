# Generate a small synthetic fact world and look inside it: facts,
# canonical sentences, perturbed paraphrases, and the subject split
# that keeps evaluation queries about unseen subjects.

import argparse

from bertese.vocab import decode_tokens
from bertese.world import SyntheticWorldSpec, generate_world


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--relations", type=int, default=3)
    ap.add_argument("--entities", type=int, default=10)
    args = ap.parse_args()

    spec = SyntheticWorldSpec(
        relation_count=args.relations,
        entities_per_relation=args.entities,
        objects_per_relation=4,
        seed=args.seed,
    )
    world = generate_world(spec)

    print(f"vocab size {len(world.vocab)}, facts {len(world.facts)}")
    print(f"train subjects {len(world.train_subjects)}, "
          f"eval subjects {len(world.eval_subjects)} (disjoint)")

    print("\nsample facts:")
    for fact in world.facts[:4]:
        print(f"  {fact.subject} --{fact.relation}--> {fact.object}")

    print("\ncanonical vs perturbed phrasing of the same fact:")
    canon = world.canonical[0]
    print(f"  canonical: {decode_tokens(canon.tokens, world.vocab)}")
    shown = 0
    for q in world.perturbed_train + world.perturbed_eval:
        if q.relation == canon.relation and q.tokens[1] == canon.tokens[1]:
            print(f"  perturbed: {decode_tokens(q.tokens, world.vocab)}")
            shown += 1
            if shown == 3:
                break

    print(f"\nquery pools: canonical {len(world.canonical)}, "
          f"perturbed train {len(world.perturbed_train)}, "
          f"perturbed eval {len(world.perturbed_eval)}")
    print("every query is a cloze: one [MASK] position, answer is a single token")


if __name__ == "__main__":
    main()
