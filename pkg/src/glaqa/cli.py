"""Command-line entry point: train, eval, rank, explain, gen-synthetic,
grad-check.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 acceptance
failure (gradient-check exceedance or training divergence).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from dataclasses import dataclass

from .data import DataError, SyntheticSpec, gen_synthetic, load_dataset, save_dataset
from .evaluation import (
    Scorer,
    build_pools,
    evaluate_pools,
    explain,
    explanation_html,
    explanation_tsv,
    format_report,
)
from .model import Model, ModelConfig
from .seeding import substream
from .text import NUM_RESERVED, build_vocabulary, encode
from .training import (
    DivergenceError,
    TrainConfig,
    check_model_gradients,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-4


class UsageError(Exception):
    """Bad flags or config content. Maps to exit code 1."""


@dataclass
class RunConfig:
    """Flat bag of every tunable, overridable from file and --set flags."""

    vocab_cap: int = 50_000
    min_count: int = 1
    embed_size: int = 100
    hidden_size: int = 141
    tf_proj: int = 50
    attn_proj: int = 140
    max_len: int = 200
    norm_alpha: float = 0.5
    norm_beta: float = 1.0
    tf_counts: bool = False
    variant: str = "global_local"
    margin: float = 0.2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 8
    keep_prob: float = 0.7
    patience: int = 5
    k: int = 500
    seed: int = 1

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embed_size=self.embed_size,
            hidden_size=self.hidden_size,
            tf_proj=self.tf_proj,
            attn_proj=self.attn_proj,
            norm_alpha=self.norm_alpha,
            norm_beta=self.norm_beta,
            max_len=self.max_len,
            tf_counts=self.tf_counts,
            variant=self.variant,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            margin=self.margin,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
            epochs=self.epochs,
            batch_size=self.batch_size,
            keep_prob=self.keep_prob,
            patience=self.patience,
            seed=self.seed,
        )


def _parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def load_run_config(path=None, overrides=()) -> RunConfig:
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    values = {}

    def apply(key, raw, where):
        key = key.strip()
        if key not in fields:
            raise UsageError(f"{where}: unknown config key {key!r}")
        kind = types.get(fields[key], fields[key])
        values[key] = _parse_value(raw, kind, key)

    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise UsageError(f"{path}:{line_no}: expected key=value")
                    key, raw = line.split("=", 1)
                    apply(key, raw, f"{path}:{line_no}")
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        apply(key, raw, "--set")
    try:
        cfg = RunConfig(**values)
        # Surface invalid combinations (negative margin, bad variant name)
        # as config errors now rather than as failures mid-command.
        cfg.train_config()
        cfg.model_config(NUM_RESERVED + 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def _log_config(cfg: RunConfig):
    resolved = " ".join(f"{k}={v}" for k, v in sorted(dataclasses.asdict(cfg).items()))
    log.info("resolved config: %s", resolved)


def _write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_p_at_1", "valid_mrr", "seconds"])
        for row in history:
            writer.writerow([
                row.epoch,
                f"{row.train_loss:.8f}",
                "" if row.valid_p_at_1 is None else f"{row.valid_p_at_1:.6f}",
                "" if row.valid_mrr is None else f"{row.valid_mrr:.6f}",
                f"{row.seconds:.3f}",
            ])


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set or ())
    _log_config(cfg)
    dataset = load_dataset(args.data)
    corpus = [q.text for q in dataset.split("train")] + list(dataset.answers.values())
    vocab = build_vocabulary(corpus, min_count=cfg.min_count, max_size=cfg.vocab_cap)
    log.info("vocabulary: %d words (+2 reserved)", len(vocab.words))
    model = Model.create(cfg.model_config(len(vocab)), substream(cfg.seed, "init"))
    history = train(model, vocab, dataset, cfg.train_config(), pool_k=min(cfg.k, len(dataset.answers)))
    save_checkpoint(args.out, model, vocab, cfg.train_config())
    log.info("checkpoint written to %s", args.out)
    if args.history:
        _write_history(args.history, history)
        log.info("history written to %s", args.history)
    return 0


def cmd_eval(args) -> int:
    model, vocab, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    pools = build_pools(dataset, args.split, args.k, substream(args.seed, "pools"))
    if not pools:
        raise DataError(f"no questions in split {args.split!r}")
    question_tokens = {q.id: encode(q.text, vocab) for q in dataset.split(args.split)}
    scorer = Scorer.for_dataset(model, vocab, dataset)
    p1, mrr_value, _ = evaluate_pools(scorer, question_tokens, pools)
    sys.stdout.write(format_report(p1, mrr_value, len(pools)))
    return 0


def cmd_rank(args) -> int:
    model, vocab, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.answers)
    if not dataset.answers:
        raise DataError(f"{args.answers}: no answers in store")
    q_ids = encode(args.question, vocab)
    if not q_ids:
        raise DataError("question tokenizes to nothing")
    scorer = Scorer.for_dataset(model, vocab, dataset)
    qctx = model.question_context(q_ids)
    scored = []
    for aid in sorted(dataset.answers):
        s, _ = model.score_from(qctx, scorer.answer_context(aid))
        scored.append((aid, float(s.value)))
    scored.sort(key=lambda e: (-e[1], e[0]))
    for rank, (aid, s) in enumerate(scored[: args.top], start=1):
        text = dataset.answers[aid]
        preview = text if len(text) <= 60 else text[:57] + "..."
        sys.stdout.write(f"{rank}\t{aid}\t{s:.6f}\t{preview}\n")
    return 0


def cmd_explain(args) -> int:
    model, vocab, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    matches = [q for q in dataset.questions if q.id == args.question_id]
    if not matches:
        raise DataError(f"question id {args.question_id} not in {args.data}")
    if args.answer_id not in dataset.answers:
        raise DataError(f"answer id {args.answer_id} not in {args.data}")
    pairs = explain(model, vocab, matches[0].text, dataset.answers[args.answer_id])
    with open(args.html, "w", encoding="utf-8") as fh:
        fh.write(explanation_html(pairs))
    tsv_path = args.tsv or args.html + ".tsv"
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write(explanation_tsv(pairs))
    log.info("explanation written to %s and %s", args.html, tsv_path)
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        vocab_size=args.vocab_size,
        n_train=args.train,
        n_valid=args.valid,
        n_test=args.test,
        answer_len=args.answer_len,
        pool_k=args.pool_k,
        seed=args.seed,
        n_topics=args.topics,
        related_per_topic=args.related,
        question_len_min=args.qlen_min,
        question_len_max=args.qlen_max,
    )
    save_dataset(gen_synthetic(spec), args.out)
    log.info("synthetic dataset written to %s", args.out)
    return 0


def cmd_grad_check(args) -> int:
    config = ModelConfig(
        vocab_size=args.vocab,
        embed_size=args.embed,
        hidden_size=args.hidden,
        tf_proj=args.tf_proj,
        attn_proj=args.proj,
        max_len=200,
    )
    results = check_model_gradients(config, seed=args.seed)
    worst = 0.0
    for group in sorted(results):
        err = results[group]
        worst = max(worst, err)
        status = "ok" if err < GRAD_TOL else "FAIL"
        sys.stdout.write(f"group={group} max_rel_err={err:.3e} {status}\n")
    if worst >= GRAD_TOL:
        sys.stdout.write(f"worst={worst:.3e} exceeds tolerance {GRAD_TOL:.0e}\n")
        return 3
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glaqa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="per-epoch metrics CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank pools over a split and report P@1/MRR")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rank", help="rank the answer store against a free-text question")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("explain", help="write attention weights as HTML plus TSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--question-id", type=int, required=True)
    p.add_argument("--answer-id", type=int, required=True)
    p.add_argument("--html", required=True)
    p.add_argument("--tsv", default=None)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gen-synthetic", help="write a deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--valid", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--answer-len", type=int, default=40)
    p.add_argument("--pool-k", type=int, default=10)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--related", type=int, default=2)
    p.add_argument("--qlen-min", type=int, default=8)
    p.add_argument("--qlen-max", type=int, default=14)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("grad-check", help="finite-difference audit of all parameter groups")
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--embed", type=int, default=8)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--tf-proj", type=int, default=4)
    p.add_argument("--proj", type=int, default=8)
    p.add_argument("--seed", type=int, default=3)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"glaqa: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError, ValueError) as exc:
        print(f"glaqa: data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"glaqa: training diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
