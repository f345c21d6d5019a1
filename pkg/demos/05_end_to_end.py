"""The whole pipeline on a miniature world, in under a minute.

Runs every stage into a temp directory - world generation, predictor
pretraining, rewriter identity pretraining, rewrite training, the
fine-tuned baseline - then prints the system comparison and a few
actual rewrites.

For the real desk-scale experiment use the CLI instead:

    bertese run-all --config configs/toy.cfg
"""

import tempfile
from pathlib import Path

from bertese.config import load_config
from bertese.evaluation import load_report
from bertese.pipeline import cmd_run_all, eval_report_path
from bertese.vocab import decode_tokens
from bertese.world import load_world

MINI = [
    "world.relation_count=3",
    "world.entities_per_relation=48",
    "world.objects_per_relation=5",
    "predictor.dim=32",
    "predictor.heads=2",
    "predictor.ffn_dim=256",
    "predictor_stage.learning_rate=0.003",
    "predictor_stage.epochs=600",
    "predictor_stage.eval_every=20",
    "predictor_stage.target_p_at_1=0.9",
    "predictor_stage.fail_p_at_1=0.0",
    "identity_stage.learning_rate=0.005",
    "identity_stage.epochs=300",
    "identity_stage.eval_every=10",
    "identity_stage.target_decode=0.99",
    "identity_stage.fail_decode=0.0",
    "bertese_stage.epochs=250",
    "ft_stage.epochs=20",
]


def main():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "toy.cfg",
                          MINI + [f"run.out_dir={tmp}"])
        for line in cmd_run_all(cfg, force=False):
            print(line)

        out = Path(tmp)
        world = load_world(out / "world.json")
        report = load_report(eval_report_path(out, "bertese"))
        print("\nsample rewrites (eval queries about unseen subjects):")
        for rec in report.records[:6]:
            if rec.rewritten_ids is None:
                continue
            mark = "+" if rec.correct else "-"
            print(f"  {mark} in : {decode_tokens(rec.tokens, world.vocab)}")
            print(f"    out: {decode_tokens(rec.rewritten_ids, world.vocab)}")
            print(f"    answer {world.vocab.token_of(rec.gold)!r}, "
                  f"predicted {world.vocab.token_of(rec.predicted)!r}")


if __name__ == "__main__":
    main()
