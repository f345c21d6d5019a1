"""Embedding-space query rewriting against a frozen masked-language model.

The package trains a small transformer ("rewriter") to map a cloze query
into a sequence of vectors that a *frozen* masked-language-model
("predictor") completes correctly. Auxiliary losses keep the rewrite
near real token embeddings and concentrated on a single mask position;
a straight-through estimator carries gradients across the discrete
mask-selection step. Everything runs on a deterministic synthetic world
of (subject, relation, object) facts rendered through paraphrased
templates, small enough for CPU training in minutes.
"""

__version__ = "0.1.0"
