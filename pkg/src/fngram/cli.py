"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on data or contract errors.
Progress lines go to stdout as ``step<TAB>loss``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import corpus, metrics, plotting
from .corpus import DialogSession, ShardError
from .generation import beam_generate, greedy_generate
from .model import ModelConfig, ProphetModel
from .tensor import Tensor
from .tokenizer import X_SEP_ID, Vocabulary, VocabError, build_vocab, decode, encode
from .training import (CheckpointError, NonFiniteError, TrainConfig, TrainState, load_checkpoint,
                       load_config, parse_config, save_checkpoint, state_from_checkpoint, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _load_vocab(args) -> Vocabulary:
    return Vocabulary.load(args.vocab, args.tokenizer)


def _encode_source(line: str, vocab: Vocabulary) -> list[int]:
    ids: list[int] = []
    for i, turn in enumerate(line.split("\t")):
        if i:
            ids.append(X_SEP_ID)
        ids.extend(encode(turn, vocab))
    return ids


def cmd_build_vocab(args) -> None:
    lines = _read_lines(args.corpus)
    wordlist = _read_lines(args.wordlist) if args.wordlist else None
    vocab = build_vocab(lines, args.mode, args.max_size, wordlist)
    vocab.save(args.out)
    print(f"vocab_size\t{len(vocab)}")


def cmd_prepare(args) -> None:
    vocab = _load_vocab(args)
    lines = [ln for ln in _read_lines(args.corpus) if ln.strip()]
    if args.mode == "dialog":
        examples = []
        for lineno, line in enumerate(lines, 1):
            try:
                session = DialogSession(tuple(line.split("\t")))
            except ValueError as e:
                raise ValueError(f"{args.corpus}:{lineno}: {e}") from None
            examples.extend(corpus.expand_dialog(session, vocab))
    else:
        if args.pack:
            docs = [corpus.join_sessions([ln.split("\t") for ln in lines], vocab)]
        else:
            docs = [_encode_source(ln, vocab) for ln in lines]
        examples = corpus.span_examples(docs, args.seed, args.max_len, args.workers)
    n = corpus.write_shard(args.out, examples)
    print(f"records\t{n}")


def _model_and_train_config(args, base_model: dict | None = None):
    model_kw, train_kw = load_config(args.config) if args.config else ({}, {})
    over_model, over_train = parse_config(args.set or [])
    model_kw.update(over_model)
    train_kw.update(over_train)
    for key in ("steps", "seed"):
        if getattr(args, key, None) is not None:
            train_kw[key] = getattr(args, key)
    if base_model is not None:
        merged = dict(base_model)
        merged.update(model_kw)
        model_kw = merged
    if "vocab_size" not in model_kw:
        if not args.vocab:
            raise UsageError("vocab_size missing: pass --vocab or set vocab_size in the config")
        model_kw["vocab_size"] = len(_load_vocab(args))
    if "alpha" not in model_kw and "n_future" in model_kw:
        model_kw["alpha"] = None
    return ModelConfig.from_dict(model_kw), TrainConfig(**train_kw)


def _run_training(args, state: TrainState, target_steps: int) -> None:
    examples = []
    for shard in args.shard:
        examples.extend(corpus.read_shard(shard))
    remaining = target_steps - state.step
    steps, totals, streams = [], [], []
    every = max(1, state.train.log_every)

    def on_step(s):
        steps.append(s.step)
        totals.append(s.loss)
        streams.append(s.stream_losses)
        if s.step % every == 0 or s.step == target_steps:
            print(f"{s.step}\t{s.loss:.6f}", flush=True)
            if args.save_every and s.step % args.save_every == 0 and s.step != target_steps:
                save_checkpoint(args.out, state)

    if remaining > 0:
        train(state, examples, remaining, on_step)
    save_checkpoint(args.out, state)
    if args.figure and steps:
        plotting.loss_curve(args.figure, steps, totals, streams)


def cmd_pretrain(args) -> None:
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        state = state_from_checkpoint(ckpt)
        _, train_kw = parse_config(args.set or [])
        if args.steps is not None:
            train_kw["steps"] = args.steps
        if train_kw:
            state.train = TrainConfig(**{**vars(state.train), **train_kw})
    else:
        model_cfg, train_cfg = _model_and_train_config(args)
        state = TrainState.create(model_cfg, train_cfg)
    _run_training(args, state, state.train.steps)


def cmd_finetune(args) -> None:
    init = load_checkpoint(args.init)
    model_cfg, train_cfg = _model_and_train_config(args, base_model=init.model_config.to_dict())
    if model_cfg.vocab_size != init.model_config.vocab_size:
        raise ValueError("finetune config vocab_size differs from the initial checkpoint")
    state = TrainState.create(model_cfg, train_cfg)
    for name, p in state.model.params.items():
        if name not in init.params or init.params[name].shape != p.shape:
            raise ValueError(f"initial checkpoint lacks a compatible parameter {name}")
        state.model.params[name] = Tensor(init.params[name].astype(p.dtype), requires_grad=True)
    _run_training(args, state, train_cfg.steps)


def cmd_generate(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = _load_vocab(args)
    params = {k: Tensor(v, requires_grad=False) for k, v in ckpt.params.items()}
    model = ProphetModel(ckpt.model_config, params)
    if len(vocab) != model.config.vocab_size:
        raise ValueError(f"vocabulary size {len(vocab)} does not match the model ({model.config.vocab_size})")
    out = []
    for line in _read_lines(args.input):
        src = _encode_source(line, vocab)[: model.config.max_len]
        if args.beam == 1:
            ids = greedy_generate(model, src, args.max_out)
        else:
            ids = beam_generate(model, src, args.beam, args.max_out, args.length_norm)[0][0]
        out.append(decode(ids, vocab, strip_specials=True))
    Path(args.output).write_text("".join(s + "\n" for s in out), encoding="utf-8")


def cmd_score(args) -> None:
    cands = _read_lines(args.candidates)
    refs = _read_lines(args.references)
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidate lines but {len(refs)} reference lines")
    if args.vocab:
        vocab = _load_vocab(args)
        tok = lambda s: [vocab.tokens[i] for i in encode(s, vocab)]  # noqa: E731
        scheme = f"{args.tokenizer} vocabulary {Path(args.vocab).name}"
    else:
        tok = str.split
        scheme = "whitespace"
    scores = metrics.score_corpus([tok(c) for c in cands], [tok(r) for r in refs])
    report = metrics.format_report(scores, scheme)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    else:
        sys.stdout.write(report)
    if args.figure:
        plotting.metric_bars(args.figure, scores)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fngram", description="future n-gram seq2seq toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def vocab_flags(p, required=True):
        p.add_argument("--vocab", required=required)
        p.add_argument("--tokenizer", choices=("char", "subword"), default="char")

    p = sub.add_parser("build-vocab", help="corpus -> vocabulary file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("char", "subword"), default="char")
    p.add_argument("--max-size", type=int, default=9360)
    p.add_argument("--wordlist")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("prepare", help="corpus + vocabulary -> binary shard")
    p.add_argument("--corpus", required=True)
    vocab_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("span", "dialog"), default="span")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=corpus.MAX_LEN)
    p.add_argument("--pack", action="store_true",
                   help="span mode: join all lines into one stream separated by [SEP]")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_prepare)

    for name, func in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune)):
        p = sub.add_parser(name, help="train on shards, writing a checkpoint")
        p.add_argument("--config")
        p.add_argument("--shard", action="append", required=True)
        p.add_argument("--out", required=True)
        vocab_flags(p, required=False)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--save-every", type=int, default=0)
        p.add_argument("--figure", help="write a loss-curve image here")
        if name == "pretrain":
            p.add_argument("--resume", help="continue from a checkpoint")
        else:
            p.add_argument("--init", required=True, help="checkpoint to start from")
        p.set_defaults(func=func)

    p = sub.add_parser("generate", help="checkpoint + sources -> one output per line")
    p.add_argument("--checkpoint", required=True)
    vocab_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-out", type=int, default=64)
    p.add_argument("--length-norm", type=float, default=1.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="candidates + references -> metric report")
    p.add_argument("--candidates", required=True)
    p.add_argument("--references", required=True)
    vocab_flags(p, required=False)
    p.add_argument("--out")
    p.add_argument("--figure", help="write a metric bar chart here")
    p.set_defaults(func=cmd_score)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "beam", 1) < 1:
            raise UsageError("--beam must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (OSError, ValueError, IndexError, VocabError, ShardError, CheckpointError, NonFiniteError) as e:
        print(f"fngram: error: {e}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
