"""Command-line entry point: ``pmilm {vocab,train,eval,predict,verify}``.

Every flag can also be supplied through an environment variable named
``PMILM_<FLAG>`` (e.g. ``PMILM_SEED=7``); an explicit flag wins.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from pmilm import __version__
from pmilm import checkpoint as ckpt_io
from pmilm.config import ConfigError, load_config, split_config
from pmilm.corpus import (
    CorpusError,
    UnigramDistribution,
    Vocabulary,
    build_vocab,
    encode,
    read_lines,
    tokens_of,
    unigram_distribution,
)
from pmilm.evaluator import format_report, token_log_probs, top_k_predictions
from pmilm.io import atomic_write_text
from pmilm.model import MODES, init_params
from pmilm.oracle import JointCounts, verify_nce_posterior, verify_pmi_optimum
from pmilm.trainer import TrainingDiverged, make_rngs, train

log = logging.getLogger("pmilm")

ENV_PREFIX = "PMILM_"


class CommandError(RuntimeError):
    """Runtime failure reported with exit status 1."""


def _env(flag: str, default=None):
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"), default)


def _threads(n: int | None):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _read(path: str | Path) -> list[str]:
    try:
        return read_lines(path)
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- vocab -----------------------------------------------------------------


def cmd_vocab(args) -> int:
    lines = _read(args.train)
    vocab = build_vocab(tokens_of(lines), args.max_size, args.min_count)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} entries to {args.out}")
    return 0


# -- train -----------------------------------------------------------------


def cmd_train(args) -> int:
    values = load_config(args.config)
    if args.seed is not None:
        values["seed"] = args.seed
    if args.k is not None:
        values["k"] = args.k
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_lines = _read(args.train)

    if args.vocab:
        try:
            vocab = Vocabulary.load(args.vocab)
        except OSError as exc:
            raise CommandError(f"cannot read {args.vocab}: {exc.strerror or exc}") from exc
    else:
        vocab = build_vocab(tokens_of(train_lines), values.get("max_vocab", 10000), values.get("min_count", 1))
    vocab.save(out / "vocab.txt")

    model_cfg, train_cfg = split_config(values, len(vocab), args.mode)
    train_ids = encode(train_lines, vocab)
    valid_ids = encode(_read(args.valid), vocab) if args.valid else None
    dist = unigram_distribution(vocab, train_ids, train_cfg.noise_exponent)
    rngs = make_rngs(train_cfg.seed)
    params = init_params(model_cfg, rngs["init"])

    started = _now()
    corpora = {name: _file_sha256(p) for name, p in (("train", args.train), ("valid", args.valid), ("test", args.test)) if p}
    manifest_base = {
        "artifact_version": __version__,
        "mode": args.mode,
        "seed": train_cfg.seed,
        "config": {**values, "mode": args.mode},
        "corpus_sha256": corpora,
        "vocab_sha256": vocab.fingerprint(),
        "started": started,
    }

    def write_manifest(path: Path, epoch: int) -> None:
        manifest = {**manifest_base, "checkpoint": path.name, "epoch": epoch, "finished": _now()}
        atomic_write_text(path.with_name(path.name + ".manifest.json"), json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    log.info("training %s-LM: |V|=%d, %d train tokens", args.mode.upper(), len(vocab), train_ids.size)
    with _threads(args.threads):
        try:
            stats = train(
                params,
                model_cfg,
                train_cfg,
                train_ids,
                dist,
                valid_ids,
                rngs=rngs,
                out_dir=out,
                vocab_hash=vocab.fingerprint(),
                eos_id=vocab.eos_id,
                on_checkpoint=write_manifest,
            )
        except TrainingDiverged as exc:
            raise CommandError(f"training diverged: {exc}; last good checkpoint kept in {out}") from exc
        except CorpusError as exc:
            raise CommandError(str(exc)) from exc
        for es in stats.epochs:
            print(es.log_line())
        if args.test:
            best = ckpt_io.load(stats.best_checkpoint or stats.last_checkpoint)
            test_ids = encode(_read(args.test), vocab)
            logp, _ = token_log_probs(best.params, test_ids, args.mode, dist, start_id=vocab.eos_id)
            print(format_report(Path(args.test).name, args.mode, test_ids.size, float(logp.sum())), end="")
    return 0


# -- eval / predict --------------------------------------------------------


def _load_model(args) -> tuple[ckpt_io.Checkpoint, Vocabulary, UnigramDistribution]:
    try:
        ckpt = ckpt_io.load(args.checkpoint)
    except OSError as exc:
        raise CommandError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror or exc}") from exc
    except ckpt_io.CheckpointError as exc:
        raise CommandError(f"invalid checkpoint {args.checkpoint}: {exc}") from exc
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).with_name("vocab.txt")
    try:
        vocab = Vocabulary.load(vocab_path)
    except OSError as exc:
        raise CommandError(f"cannot read vocabulary {vocab_path}: {exc.strerror or exc}") from exc
    if vocab.fingerprint() != ckpt.vocab_hash:
        raise CommandError(f"vocabulary {vocab_path} does not match the one the checkpoint was trained with")
    dist = UnigramDistribution.from_counts(ckpt.unigram_counts, ckpt.noise_exponent)
    return ckpt, vocab, dist


def cmd_eval(args) -> int:
    ckpt, vocab, dist = _load_model(args)
    with _threads(args.threads):
        for path in args.test:
            ids = encode(_read(path), vocab)
            if ids.size == 0:
                raise CommandError(f"{path} contains no tokens")
            logp, _ = token_log_probs(ckpt.params, ids, ckpt.mode, dist, start_id=vocab.eos_id)
            print(format_report(Path(path).name, ckpt.mode, ids.size, float(logp.sum())), end="")
            if args.dump:
                dump = Path(args.dump)
                if len(args.test) > 1:
                    dump = dump.with_name(f"{dump.stem}.{Path(path).stem}{dump.suffix}")
                rows = "".join(f"{vocab.id_to_token[i]}\t{lp:.8f}\n" for i, lp in zip(ids, logp))
                atomic_write_text(dump, rows)
    return 0


def cmd_predict(args) -> int:
    ckpt, vocab, dist = _load_model(args)
    prefix = np.array(vocab.lookup(args.prefix.split()), dtype=np.int64)
    for token, prob in top_k_predictions(ckpt.params, prefix, ckpt.mode, dist, args.top, vocab, vocab.eos_id):
        print(f"{token}\t{prob:.6f}")
    return 0


# -- verify ----------------------------------------------------------------


def dense_joint(rng: np.random.Generator, size: int) -> JointCounts:
    """Random joint with every cell within a factor 3 of every other."""
    return JointCounts(rng.uniform(0.5, 1.5, size=(size, size)))


def cmd_verify(args) -> int:
    failures = 0

    def report(label: str, ok: bool) -> None:
        nonlocal failures
        failures += not ok
        print(f"{label}: {'PASS' if ok else 'FAIL'}")

    err = verify_nce_posterior(args.instances, args.vocab_size, args.noise_k, seed=args.seed)
    print(f"nce posterior identity: max err {err:.3e} over {args.instances} instances")
    report("nce posterior max err <= 1e-12", err <= 1e-12)

    rng = np.random.default_rng(args.seed)
    joint = dense_joint(rng, args.size)
    devs = []
    for d in range(1, args.size + 1):
        res = verify_pmi_optimum(joint, args.pmi_k, d, seed=args.seed)
        devs.append(res.deviation)
        note = "" if res.converged else f" (not converged, grad norm {res.grad_norm:.2e})"
        print(f"pmi optimum d={d}: max |w.c - pmi| {res.deviation:.3e} after {res.iterations} iterations{note}")
    report("full-rank pmi deviation <= 1e-3", devs[-1] <= 1e-3)
    report("pmi deviation non-increasing in d", all(a >= b for a, b in zip(devs, devs[1:])))
    return 1 if failures else 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmilm", description="Train and evaluate PMI-LM and NCE-LM language models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def int_env(flag, default=None):
        raw = _env(flag)
        return int(raw) if raw is not None else default

    p = sub.add_parser("vocab", help="build a vocabulary file from a training corpus")
    p.add_argument("--train", default=_env("train"), required=_env("train") is None)
    p.add_argument("--max-size", type=int, default=int_env("max_size", 10000))
    p.add_argument("--min-count", type=int, default=int_env("min_count", 1))
    p.add_argument("--out", default=_env("out", "vocab.txt"))
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train a PMI-LM or NCE-LM")
    p.add_argument("--config", default=_env("config", "ptb"), help="config file or preset name (ptb, bigcorpus, fixture)")
    p.add_argument("--mode", choices=MODES, default=_env("mode", "pmi"))
    p.add_argument("--train", default=_env("train"), required=_env("train") is None)
    p.add_argument("--valid", default=_env("valid"))
    p.add_argument("--test", default=_env("test"))
    p.add_argument("--vocab", default=_env("vocab"))
    p.add_argument("--out", default=_env("out", "run"))
    p.add_argument("--seed", type=int, default=int_env("seed"))
    p.add_argument("--k", type=int, default=int_env("k"))
    p.add_argument("--threads", type=int, default=int_env("threads", 1))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report perplexity of a checkpoint on one or more corpora")
    p.add_argument("--checkpoint", default=_env("checkpoint"), required=_env("checkpoint") is None)
    p.add_argument("--vocab", default=_env("vocab"))
    p.add_argument("--test", nargs="+", default=_env("test", "").split() or None, required=_env("test") is None)
    p.add_argument("--dump", default=_env("dump"), help="write per-token log-probs as token<TAB>logprob")
    p.add_argument("--threads", type=int, default=int_env("threads", 1))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="show the most probable next words after a prefix")
    p.add_argument("--checkpoint", default=_env("checkpoint"), required=_env("checkpoint") is None)
    p.add_argument("--vocab", default=_env("vocab"))
    p.add_argument("--prefix", default=_env("prefix", ""))
    p.add_argument("--top", type=int, default=int_env("top", 10))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("verify", help="run the brute-force PMI and NCE oracles")
    p.add_argument("--seed", type=int, default=int_env("seed", 0))
    p.add_argument("--size", type=int, default=int_env("size", 5), help="joint distribution is size x size")
    p.add_argument("--instances", type=int, default=int_env("instances", 100))
    p.add_argument("--vocab-size", type=int, default=int_env("vocab_size", 5))
    p.add_argument("--noise-k", type=float, default=float(_env("noise_k", 3)))
    p.add_argument("--pmi-k", type=float, default=float(_env("pmi_k", 2)))
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"pmilm: config error: {exc}", file=sys.stderr)
        return 2
    except (CommandError, ValueError) as exc:
        print(f"pmilm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
