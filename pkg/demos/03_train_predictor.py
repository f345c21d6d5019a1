"""Pretrain the frozen fact predictor on a pocket-sized world.

The predictor is a 2-layer masked-language model trained only on
canonical sentences. Watch P@1 on held-out canonical queries climb;
afterwards, ask it a perturbed question and see it stumble — that gap
is what the rewriter exists to close.
"""

import argparse
import tempfile
from pathlib import Path

from bertese.config import load_config
from bertese.evaluation import evaluate_model, predict_mask_tokens
from bertese.pipeline import RunLog, train_predictor_stage
from bertese.vocab import decode_tokens
from bertese.world import generate_world

MINI = [
    "world.relation_count=3",
    "world.entities_per_relation=24",
    "world.objects_per_relation=6",
    "predictor.dim=32",
    "predictor.heads=2",
    "predictor.ffn_dim=256",
    "predictor_stage.learning_rate=0.003",
    "predictor_stage.epochs=600",
    "predictor_stage.eval_every=20",
    "predictor_stage.target_p_at_1=0.9",
    "predictor_stage.fail_p_at_1=0.0",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        overrides = MINI + [f"run.seed={args.seed}", f"run.out_dir={tmp}"]
        cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "toy.cfg",
                          overrides)
        world = generate_world(cfg.world_spec())

        print(f"{len(world.facts)} facts, vocab {len(world.vocab)}; training...")
        with RunLog(Path(tmp) / "log.jsonl") as log:
            model, metrics = train_predictor_stage(cfg, world, log)
        print(f"stopped after {metrics['epochs_run']} epochs, "
              f"canonical P@1 {metrics['canonical_p_at_1']:.3f}")

        report = evaluate_model("zero-shot", list(world.perturbed_eval), model)
        print(f"same model on perturbed phrasings: P@1 {report.macro_p_at_1:.3f}")

        q = world.perturbed_eval[0]
        (pred, prob), = predict_mask_tokens(model, [q])
        print(f"\n  q: {decode_tokens(q.tokens, world.vocab)}")
        print(f"  gold {world.vocab.token_of(q.answer)!r}, "
              f"predicted {world.vocab.token_of(pred)!r} (p={prob:.2f})")


if __name__ == "__main__":
    main()
