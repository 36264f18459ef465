#!/usr/bin/env python3
"""Independent oracle for the multi-task loss values pinned in the test suite.

Recomputes, in numpy float64, the losses that selfdistill-core's
FixedLogitStudent must produce: position t of a target, with an input of
length L, sees logits BASE * (1 + 0.5*t + 0.25*L) over a five-token
vocabulary. Each (predict, explain) pair contributes
    label_xent + lambda * rationale_xent
and the batch loss is the mean over pairs, where each xent is the mean
per-token softmax cross-entropy.

Run from the repository root:
    python3 tools/gen_loss_oracle.py > crates/core/tests/fixtures/loss_oracle.json
"""

import json

import numpy as np

BASE = np.array([0.2, -0.1, 0.4, 0.0, -0.3], dtype=np.float64)

SE_BATCH = [
    {"predict_input": "t0 t1", "predict_target": "t2", "explain_input": "t0 t1", "explain_target": "t3 t4"},
    {"predict_input": "t2", "predict_target": "t0 t1", "explain_input": "t2", "explain_target": "t4"},
    {"predict_input": "t1 t3 t4", "predict_target": "t2 t2", "explain_input": "t1 t3 t4", "explain_target": "t0"},
]

COT_BATCH = [
    {"predict_input": "t4 t0", "predict_target": "t1", "explain_input": "t4 t0", "explain_target": "t2 t3"},
    {"predict_input": "t3 t3 t1", "predict_target": "t0 t4", "explain_input": "t3 t3 t1", "explain_target": "t1"},
]

LAMBDAS = [0.0, 0.25, 0.5, 1.0, 2.0]


def toks(text):
    return [int(w[1]) for w in text.split()]


def xent(input_text, target_text):
    inp = toks(input_text)
    tgt = toks(target_text)
    total = 0.0
    for t, tok in enumerate(tgt):
        logits = BASE * (1.0 + 0.5 * t + 0.25 * len(inp))
        z = logits - logits.max()
        log_probs = z - np.log(np.exp(z).sum())
        total += -log_probs[tok]
    return total / len(tgt)


def batch_loss(batch, lam):
    contribs = [
        xent(p["predict_input"], p["predict_target"])
        + lam * xent(p["explain_input"], p["explain_target"])
        for p in batch
    ]
    return float(np.mean(contribs))


def main():
    out = {
        "base_logits": BASE.tolist(),
        "lambdas": LAMBDAS,
        "se_batch": SE_BATCH,
        "cot_batch": COT_BATCH,
        "expected_se": [batch_loss(SE_BATCH, lam) for lam in LAMBDAS],
        "expected_cot": [batch_loss(COT_BATCH, lam) for lam in LAMBDAS],
        # Affinity in lambda: loss(lam) == loss(0) + lam * mean(explain xents).
        "se_rationale_mean": float(
            np.mean([xent(p["explain_input"], p["explain_target"]) for p in SE_BATCH])
        ),
        "cot_rationale_mean": float(
            np.mean([xent(p["explain_input"], p["explain_target"]) for p in COT_BATCH])
        ),
    }
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
