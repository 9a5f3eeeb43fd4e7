# N-best reranking on a synthetic 20-utterance set, with a small LSTM that
# has been wired by hand to reproduce a bigram table.
#
#   python3 demos/rerank_nbest.py

from transfornn.evaluation import corpus_wer, sweep_lm_weight, wer
from transfornn.synthetic import bigram_log_probs, bigram_lstm, rerank_fixture

refs, nbests, vocab = rerank_fixture()
model = bigram_lstm(bigram_log_probs(refs.values(), vocab))

nb = nbests[0]
print("utterance", nb.utterance_id, "reference:", " ".join(refs[nb.utterance_id]))
for score, words in nb.hypotheses:
    print(f"  acoustic {score:7.3f}  {' '.join(words)}")

baseline = corpus_wer(refs, nbests, None, None, lm_weight=0.0)
print("acoustic-only WER", round(baseline.wer, 4))
for weight, report in sweep_lm_weight(refs, nbests, model, vocab):
    print(f"lm_weight={weight:.1f}  WER {report.wer:.4f}")

# substitutions win ties against an insertion plus a deletion
print(wer("a b c d".split(), "b c d e".split()))
print(wer("a b a".split(), "b c a b".split()))
