"""Command-line entry point: ``transfornn <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime or check failure, 2 usage error.  Every
subcommand first echoes its resolved configuration as ``config key=value``
lines and ends with one line of ``key=value`` tokens.
"""

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import gradcheck, tables
from .checkpoint import load_checkpoint, save_checkpoint
from .data import UNK_ID, build_vocab, load_vocab, read_text, save_vocab, tokenize
from .errors import TransfoRnnError
from .evaluation import corpus_wer, perplexity, read_nbest, read_references, sweep_lm_weight
from .models import FAMILIES, LanguageModel, ModelConfig, count_parameters, parameter_count
from .training import TrainerConfig, train

log = logging.getLogger("transfornn")


def _bool_flag(parser, name, default, help):
    dest = name.replace("-", "_")
    group = parser.add_mutually_exclusive_group()
    group.add_argument(f"--{name}", dest=dest, action="store_true", help=help)
    group.add_argument(f"--no-{name}", dest=dest, action="store_false")
    parser.set_defaults(**{dest: default})


def _add_model_flags(p, vocab=False):
    p.add_argument("--family", choices=FAMILIES, default="transfornn")
    if vocab:
        p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--d", type=int, default=512, help="embedding dimension")
    p.add_argument("--n-layers", type=int, default=None, help="Transformer layers (default 2, 0 for lstm)")
    p.add_argument("--m-layers", type=int, default=None, help="LSTM layers (default 2, 0 for transformer)")
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--d-ff", type=int, default=1024)
    p.add_argument("--use-pos", choices=["auto", "true", "false"], default="auto",
                   help="sinusoidal positions (auto: on unless family is lstm)")
    _bool_flag(p, "tied", True, "share input embedding with the output projection")
    p.add_argument("--lstm-hidden", type=int, default=None, help="LSTM width (default d)")
    _bool_flag(p, "embed-scale", True, "multiply raw embeddings by sqrt(d)")
    p.add_argument("--inference-mode", choices=["all", "final"], default="all")
    p.add_argument("--seed", type=int, default=0, help="overridden by $TFRN_SEED")


def _model_config(args, vocab_size) -> ModelConfig:
    n = args.n_layers if args.n_layers is not None else (0 if args.family == "lstm" else 2)
    m = args.m_layers if args.m_layers is not None else (0 if args.family == "transformer" else 2)
    use_pos = None if args.use_pos == "auto" else args.use_pos == "true"
    return ModelConfig(args.family, vocab_size, d=args.d, n_layers=n, m_layers=m, heads=args.heads,
                       d_ff=args.d_ff, use_pos=use_pos, tied=args.tied, lstm_hidden=args.lstm_hidden,
                       embed_scale=args.embed_scale, inference_mode=args.inference_mode, seed=args.seed)


def _echo(**sections):
    for section, obj in sections.items():
        items = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else obj
        for k, v in items.items():
            print(f"config {section}.{k}={v}")


def cmd_train(args) -> int:
    train_lines = read_text(args.train)
    valid_lines = read_text(args.valid)
    vocab = load_vocab(args.vocab) if args.vocab else build_vocab(train_lines, args.max_vocab)
    cfg = _model_config(args, len(vocab))
    out = Path(args.out)
    vocab_out = Path(args.vocab_out) if args.vocab_out else out.with_suffix(out.suffix + ".vocab")
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    tcfg = TrainerConfig(lr0=args.lr0, batch=args.batch, window=args.window, clip=args.clip,
                         decay=args.decay, threshold=args.threshold, patience=args.patience,
                         max_epochs=args.max_epochs, log_path=str(log_path))
    _echo(model=cfg, trainer=tcfg, paths=dict(train=args.train, valid=args.valid, out=str(out),
                                              vocab=args.vocab, vocab_out=str(vocab_out)))
    train_ids = tokenize(train_lines, vocab).ids
    valid_ids = tokenize(valid_lines, vocab).ids
    result = train(LanguageModel(cfg), train_ids, valid_ids, tcfg)
    for rec in result.log:
        print(f"epoch={rec.epoch} train_ppl={rec.train_ppl:.4f} valid_ppl={rec.valid_ppl:.4f} lr={rec.lr:.6g}")
    save_checkpoint(result.model, out)
    save_vocab(vocab, vocab_out)
    best = result.log[result.best_epoch - 1]
    print(f"checkpoint={out} best_epoch={result.best_epoch} valid_ppl={best.valid_ppl:.6f} "
          f"params={count_parameters(result.model)}")
    return 0


def _vocab_for(args):
    path = args.vocab or f"{args.model}.vocab"
    return load_vocab(path)


def cmd_eval_ppl(args) -> int:
    model = load_checkpoint(args.model)
    vocab = _vocab_for(args)
    window = args.window
    _echo(model=model.config, eval=dict(model=args.model, corpus=args.corpus, mode=args.mode, window=window))
    if len(vocab) != model.config.vocab_size:
        raise TransfoRnnError(f"vocabulary has {len(vocab)} entries, model expects {model.config.vocab_size}")
    lines = read_text(args.corpus)
    ids = tokenize(lines, vocab).ids
    words = sum(len(line.split()) for line in lines)
    oov = sum(1 for line in lines for w in line.split() if vocab.lookup(w) == UNK_ID and w != "<unk>")
    if words and oov / words > 0.5:
        print(f"warning: {oov / words:.0%} of corpus words are out of vocabulary; wrong vocab file?",
              file=sys.stderr)
    ppl = perplexity(model, ids, mode=args.mode, window=window)
    print(f"ppl={ppl:.6f} tokens={len(ids) - 1} mode={args.mode}")
    return 0


def cmd_rerank(args) -> int:
    model = load_checkpoint(args.model)
    vocab = _vocab_for(args)
    _echo(rerank=dict(model=args.model, refs=args.refs, nbest=args.nbest,
                      lm_weight=args.lm_weight, sweep=args.sweep))
    refs = read_references(args.refs)
    nbests = read_nbest(args.nbest)
    if args.sweep:
        results = sweep_lm_weight(refs, nbests, model, vocab)
        for w, report in results:
            print(f"lm_weight={w:.1f} wer={report.wer:.6f}")
        best_w, best = min(results, key=lambda wr: (wr[1].wer, wr[0]))
        baseline = results[0][1].wer
        print(f"best_lm_weight={best_w:.1f} wer={best.wer:.6f} baseline_wer={baseline:.6f}")
        return 0
    report = corpus_wer(refs, nbests, model, vocab, args.lm_weight)
    for line in report.lines():
        print(line)
    t = report.total
    print(f"wer={report.wer:.6f} lm_weight={args.lm_weight} sub={t.substitutions} ins={t.insertions} "
          f"del={t.deletions} ref_words={t.reference_length}")
    return 0


def _print_table(model: LanguageModel):
    for name, p in model.named_parameters():
        print(f"{name}\t{'x'.join(map(str, p.shape))}\t{p.size}")


def _print_grid(vocab_size, rows, attr):
    print(f"# vocabulary {vocab_size}")
    print("table\tfamily\td\tN\tM\toutput\tcount\treported_M\trel_diff")
    for row in rows:
        reported = getattr(row, attr)
        count = parameter_count(row.config(vocab_size))
        diff = "" if reported is None else f"{count / (reported * 1e6) - 1:+.4f}"
        print(f"{row.table}\t{row.family}\t{row.d}\t{row.n_layers}\t{row.m_layers}\t"
              f"{'tied' if row.tied else 'untied'}\t{count}\t{reported or ''}\t{diff}")


def _instantiate_rows():
    """Build every published configuration for real and walk its tensors."""
    rows = [(r, tables.PTB_VOCAB) for r in tables.TABLE1 + tables.TABLE2]
    rows += [(r, tables.LIBRISPEECH_VOCAB) for r in tables.TABLE5]
    bad = 0
    for row, vocab_size in rows:
        cfg = row.config(vocab_size)
        model = LanguageModel(cfg)
        walked, analytic = count_parameters(model), parameter_count(cfg)
        ok = walked == analytic
        bad += not ok
        print(f"instantiated\t{row.label}\tV={vocab_size}\t{walked}\t{'ok' if ok else 'MISMATCH'}")
        del model
    return len(rows), bad


def cmd_inspect(args) -> int:
    if args.table1:
        print("# TransfoRNN rows use an untied output projection: the reported counts are")
        print("# only reproduced with one, although all models are described as tied.")
        _print_grid(tables.PTB_VOCAB, tables.TABLE1 + tables.TABLE2, "ptb_millions")
        if args.wikitext:
            _print_grid(tables.WIKITEXT2_VOCAB, tables.TABLE1 + tables.TABLE2, "wikitext_millions")
        if args.instantiate:
            built, bad = _instantiate_rows()
            print(f"rows={built} mismatches={bad}")
            return 1 if bad else 0
        print(f"rows={len(tables.TABLE1) + len(tables.TABLE2)} vocab={tables.PTB_VOCAB}")
        return 0
    if args.model:
        model = load_checkpoint(args.model)
        cfg = model.config
    else:
        cfg = _model_config(args, args.vocab_size)
        model = LanguageModel(cfg)
    _echo(model=cfg)
    _print_table(model)
    walked = count_parameters(model)
    analytic = parameter_count(cfg)
    print(f"total={walked} analytic={analytic} millions={walked / 1e6:.2f}")
    return 0 if walked == analytic else 1


def cmd_grad_check(args) -> int:
    families = FAMILIES if args.family == "all" else (args.family,)
    _echo(grad_check=dict(family=args.family, d=args.d, window=args.window, vocab_size=args.vocab_size,
                          heads=args.heads, d_ff=args.d_ff, seed=args.seed, step=args.step))
    failing = []
    worst = 0.0
    for family in families:
        for chk in gradcheck.run_grad_check(family, d=args.d, window=args.window, vocab_size=args.vocab_size,
                                            heads=args.heads, d_ff=args.d_ff, seed=args.seed, h=args.step):
            status = "ok" if chk.ok else "FAIL"
            print(f"{family}\t{chk.name}\t{'x'.join(map(str, chk.shape))}\t{chk.max_rel_error:.3e}\t{status}")
            worst = max(worst, chk.max_rel_error)
            if not chk.ok:
                failing.append(f"{family}:{chk.name}")
    if failing:
        print("failing tensors: " + ", ".join(failing), file=sys.stderr)
    print(f"max_rel_error={worst:.3e} tolerance={gradcheck.TOLERANCE:g} passed={'true' if not failing else 'false'}")
    return 1 if failing else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transfornn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a language model")
    _add_model_flags(p)
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--vocab", default=None, help="existing vocabulary file (default: build from --train)")
    p.add_argument("--max-vocab", type=int, default=10000)
    p.add_argument("--vocab-out", default=None, help="default: <out>.vocab")
    p.add_argument("--log", default=None, help="per-epoch log (default: <out>.log)")
    p.add_argument("--lr0", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--window", type=int, default=64)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=0.001)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--max-epochs", type=int, default=20)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ppl", help="perplexity of a checkpoint on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", default=None, help="default: <model>.vocab")
    p.add_argument("--mode", choices=["all", "final"], default="all")
    p.add_argument("--window", type=int, default=64)
    p.set_defaults(func=cmd_eval_ppl)

    p = sub.add_parser("rerank", help="rerank N-best lists and report WER")
    p.add_argument("--model", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--nbest", required=True)
    p.add_argument("--vocab", default=None, help="default: <model>.vocab")
    p.add_argument("--lm-weight", type=float, default=0.5)
    p.add_argument("--sweep", action="store_true", help="grid over lm_weight 0.0, 0.1, ..., 1.0")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("inspect", help="parameter table of a checkpoint or configuration")
    _add_model_flags(p, vocab=True)
    p.add_argument("--model", default=None)
    p.add_argument("--table1", action="store_true", help="print counts for the published model grids")
    p.add_argument("--wikitext", action="store_true", help="with --table1, also the 33K-vocabulary grid")
    p.add_argument("--instantiate", action="store_true",
                   help="with --table1, build every published grid model, including the speech ones, and walk its tensors")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("grad-check", help="finite-difference check of every parameter gradient")
    p.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--window", type=int, default=6)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=32)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0, help="overridden by $TFRN_SEED")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    env_seed = os.environ.get("TFRN_SEED")
    if env_seed is not None and hasattr(args, "seed"):
        try:
            args.seed = int(env_seed)
        except ValueError:
            parser.error(f"TFRN_SEED must be an integer, got {env_seed!r}")
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TransfoRnnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
