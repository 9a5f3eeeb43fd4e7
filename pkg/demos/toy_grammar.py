# Train the three model families on a small synthetic language and compare
# them with a unigram model.  Takes a few minutes on a laptop.
#
#   python3 demos/toy_grammar.py

import time

from transfornn.evaluation import perplexity
from transfornn.models import LanguageModel, ModelConfig
from transfornn.synthetic import MarkovGrammar, unigram_perplexity
from transfornn.training import TrainerConfig, train

# 50 symbols; each token depends on the previous three
ids = MarkovGrammar(seed=0).sample(20000, seed=1)
tr, va = ids[:18000], ids[18000:]
print("unigram perplexity", round(unigram_perplexity(tr, va, 50), 2))

runs = [
    ("transformer", 2, 0, 0.5, 8),
    ("lstm", 0, 1, 1.0, 16),
    ("transfornn", 2, 1, 0.5, 16),
]
for family, n, m, lr, window in runs:
    cfg = ModelConfig(family, 50, d=32, n_layers=n, m_layers=m, heads=4, d_ff=64, seed=0)
    start = time.time()
    result = train(LanguageModel(cfg), tr, va, TrainerConfig(lr0=lr, batch=16, window=window, max_epochs=10))
    for rec in result.log:
        print(" ", family, rec.line())
    print(f"{family}: best valid perplexity {min(r.valid_ppl for r in result.log):.2f} "
          f"({time.time() - start:.0f}s)")
    if family == "transformer":
        # every prediction gets a full window of context in final mode
        print("  all-position", round(perplexity(result.model, va, "all", window), 3),
              "final-position", round(perplexity(result.model, va, "final", window), 3))
