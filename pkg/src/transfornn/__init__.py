"""Transformer, LSTM and cascaded Transformer+LSTM language models on a
small numpy autodiff core."""

from .data import Vocabulary, build_vocab, load_vocab, save_vocab, tokenize
from .evaluation import NBestList, WerStats, corpus_wer, perplexity, rerank, sentence_logprob, wer
from .models import LanguageModel, ModelConfig, count_parameters, loss_all_positions, nll_final_position, parameter_count
from .checkpoint import load_checkpoint, save_checkpoint
from .tensor import Tensor, backward, finite_difference_grad, no_grad
from .training import NewBobState, TrainerConfig, batchify, new_bob_update, sgd_step, train

__version__ = "0.1.0"
