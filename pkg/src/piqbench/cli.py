"""``piq`` command-line entry point.

Exit codes: 0 success, 1 check failed (losscheck), 2 data validation failure,
3 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dedup, losses
from .allocator import plan_allocation
from .embedding import EmbeddingMatrix, read_embeddings, write_embeddings
from .exceptions import DimensionMismatch, FormatError, ParseError, PiqError, SchemaError
from .metrics import lts
from .report import build_report, prediction_problems, read_predictions, report_to_json, write_predictions
from .sampler import BatchSampler, SamplerConfig, Strategy
from .schema import (
    Subset,
    default_schema,
    load_schema_file,
    read_annotations,
    read_split,
    validate_annotations,
    write_annotations,
    write_split,
)
from .synth import SynthSpec, gen_embeddings

logger = logging.getLogger("piqbench")

EXIT_OK, EXIT_CHECK, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3
LOSSCHECK_TOLERANCE = 1e-4


class ValidationFailed(Exception):
    pass


def _configure_logging() -> None:
    level = os.environ.get("PIQ_LOG", "warn").lower()
    level = {"warn": "WARNING", "warning": "WARNING", "error": "ERROR", "info": "INFO", "debug": "DEBUG"}.get(level, "WARNING")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _schema(args):
    return load_schema_file(args.schema) if getattr(args, "schema", None) else default_schema()


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# --- subcommands -----------------------------------------------------------

def cmd_evaluate(args) -> int:
    schema = _schema(args)
    records = read_annotations(args.annotations)
    split = read_split(args.split) if args.split else None
    report = validate_annotations(schema, records, split)
    if report:
        raise ValidationFailed(report.format())
    truth = {r.image_id: r for r in records}
    predictions = read_predictions(args.predictions)
    problems = prediction_problems(schema, truth, predictions)
    query = read_embeddings(args.query)
    gallery = read_embeddings(args.gallery)
    if query.dim != gallery.dim:
        raise DimensionMismatch(f"query embeddings have {query.dim} dims, gallery {gallery.dim}")
    unknown = [i for i in query.ids + gallery.ids if i not in truth]
    problems += [f"{i}: embedding row without ground truth" for i in unknown]
    if problems:
        raise ValidationFailed("\n".join(problems))

    groups = None
    if args.groups and Path(args.groups).exists():
        groups = dedup.GroupAssignment.from_json(Path(args.groups).read_text(encoding="utf-8")).groups
    else:
        logger.warning("no groups file%s; evaluating without near-duplicate exclusion",
                       f" at {args.groups}" if args.groups else "")
    result = build_report(schema, records, predictions, query, gallery, groups, n_jobs=args.threads)
    _write_text(args.out, report_to_json(result))
    return EXIT_OK


def _read_counts(path) -> list[int]:
    counts = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                counts.append(int(row[-1]))
            except ValueError:
                if counts:
                    raise ParseError(f"{path}: non-integer count {row[-1]!r}") from None
    return counts


def cmd_lts(args) -> int:
    print(lts(_read_counts(args.counts), args.k))
    return EXIT_OK


def cmd_phash(args) -> int:
    if args.images:
        hashes = dedup.hash_directory(args.images)
    else:
        hashes = dedup.read_hash_csv(args.hashes)
    if args.hash_out:
        dedup.write_hash_csv(args.hash_out, hashes)
    assignment = dedup.group(hashes, args.threshold, prefilter=args.prefilter)
    _write_text(args.out, assignment.to_json() + "\n")
    return EXIT_OK


def cmd_plan(args) -> int:
    alloc = plan_allocation(args.dims, _schema(args), args.residual_weight, args.shared_weight)
    print(alloc.to_json())
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = SynthSpec(
        num_ids=args.num_ids, dim=args.dim, tail_exponent=args.tail_exponent, max_count=args.max_count,
        separation=args.separation, noise=args.noise, num_unidentified=args.unidentified,
        train_fraction=args.train_fraction, query_fraction=args.query_fraction, seed=args.seed,
    )
    schema = _schema(args)
    data = gen_embeddings(spec, schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_annotations(out / "annotations.csv", data.annotations)
    write_split(out / "split.csv", data.split)
    write_embeddings(out / "embeddings.piqe", data.embeddings)
    for subset in (Subset.QUERY, Subset.GALLERY):
        emb, _ = data.subset(subset)
        write_embeddings(out / f"{subset.value}.piqe", emb)

    rng = np.random.default_rng([args.seed, 9])
    test = set(data.split.ids(Subset.QUERY)) | set(data.split.ids(Subset.GALLERY))
    card = schema.cardinalities()
    predictions = {}
    for a in data.annotations:
        if a.image_id not in test:
            continue
        labels = {}
        for t, idx in a.labels.items():
            if rng.random() < args.pred_error:
                idx = (int(rng.integers(card[t])),)
            labels[t] = idx
        predictions[a.image_id] = labels
    write_predictions(out / "predictions.csv", predictions)
    logger.info("wrote %d samples to %s", len(data.annotations), out)
    return EXIT_OK


def _random_labels(rng, n):
    y = rng.integers(0, max(2, n // 3), size=n)
    y[1] = y[0]  # at least one positive pair
    if n > 2 and np.all(y == y[0]):
        y[-1] = y[0] + 1
    return y.tolist()


def cmd_losscheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    n, d, eps = args.n, args.d, args.eps
    if args.loss == "br":
        err = losses.finite_diff_check(losses.br_loss, losses.FeatureBatch(rng.normal(size=(n, d)), _random_labels(rng, n)), eps)
    elif args.loss == "triplet":
        err = losses.finite_diff_check(lambda b: losses.triplet_loss_batch_hard(b, args.margin),
                                       losses.FeatureBatch(rng.normal(size=(n, d)), _random_labels(rng, n)), eps)
    elif args.loss == "ce":
        target = int(rng.integers(d))
        err = losses.finite_diff_check(lambda z: losses.softmax_ce(z, target), rng.normal(size=d), eps)
    elif args.loss == "bce":
        target = {int(rng.integers(d))}
        err = losses.finite_diff_check(lambda z: losses.bce_multilabel(z, target), rng.normal(size=d), eps)
    else:
        L = rng.uniform(0.1, 3.0, size=n)
        s = rng.normal(size=n)
        err = max(
            losses.finite_diff_check(lambda x: losses.total_loss_uncertainty(x, s), L, eps),
            losses.finite_diff_check(losses.total_loss_uncertainty, L, eps, wrt="grad_aux", aux=s),
        )
    ok = err <= LOSSCHECK_TOLERANCE
    print(f"loss={args.loss} max_rel_error={err:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_sample(args) -> int:
    person_ids = None
    rows = None
    if args.annotations:
        records = read_annotations(args.annotations)
        rows = list(range(len(records)))
        if args.split:
            split = read_split(args.split)
            rows = [i for i, r in enumerate(records) if split.membership.get(r.image_id) is Subset.TRAIN]
        person_ids = [records[i].person_id for i in rows]
    cfg = SamplerConfig(Strategy(args.strategy), args.batch_size, args.P, args.K, args.seed)
    n = len(person_ids) if person_ids is not None else args.n
    if cfg.strategy is Strategy.RANDOM and n is None:
        raise ValidationFailed("random sampling needs --n or --annotations")
    sampler = BatchSampler(cfg, person_ids=person_ids, n=n)
    for _, batch in sampler.epochs(args.epochs):
        # indices always refer to annotation rows
        out = [rows[i] for i in batch] if rows is not None else batch
        sys.stdout.write(json.dumps(out) + "\n")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="piq", description="Portrait interpretation evaluation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("evaluate", help="compute the evaluation report")
    e.add_argument("--annotations", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--query", required=True, help="query embedding file (.piqe)")
    e.add_argument("--gallery", required=True, help="gallery embedding file (.piqe)")
    e.add_argument("--split")
    e.add_argument("--groups", help="near-duplicate groups JSON from `piq phash`")
    e.add_argument("--schema")
    e.add_argument("--out", default="-")
    e.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    e.set_defaults(func=cmd_evaluate)

    lt = sub.add_parser("lts", help="long-tail score of a count histogram")
    lt.add_argument("--counts", required=True, help="CSV whose last column holds per-class counts")
    lt.add_argument("--k", type=float, default=0.2)
    lt.set_defaults(func=cmd_lts)

    ph = sub.add_parser("phash", help="hash images and group near-duplicates")
    src = ph.add_mutually_exclusive_group(required=True)
    src.add_argument("--images", help="directory of PNG/JPEG files")
    src.add_argument("--hashes", help="CSV image_id,hash_hex")
    ph.add_argument("--threshold", type=int, default=dedup.DEFAULT_THRESHOLD)
    ph.add_argument("--prefilter", action="store_true", help="use the banded multi-index prefilter")
    ph.add_argument("--hash-out")
    ph.add_argument("--out", default="-")
    ph.set_defaults(func=cmd_phash)

    pl = sub.add_parser("plan", help="print the feature-space allocation")
    pl.add_argument("--dims", type=int, required=True)
    pl.add_argument("--schema")
    pl.add_argument("--residual-weight", type=int)
    pl.add_argument("--shared-weight", type=int)
    pl.set_defaults(func=cmd_plan)

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--num-ids", type=int, default=20)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--tail-exponent", type=float, default=1.0)
    g.add_argument("--max-count", type=int, default=12)
    g.add_argument("--separation", type=float, default=0.5)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--unidentified", type=int, default=0)
    g.add_argument("--train-fraction", type=float, default=0.0)
    g.add_argument("--query-fraction", type=float, default=0.3)
    g.add_argument("--pred-error", type=float, default=0.0, help="share of predictions replaced at random")
    g.add_argument("--schema")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen)

    lc = sub.add_parser("losscheck", help="finite-difference check of a loss kernel")
    lc.add_argument("--loss", choices=["br", "triplet", "ce", "bce", "uncertainty"], required=True)
    lc.add_argument("--n", type=int, default=8)
    lc.add_argument("--d", type=int, default=16)
    lc.add_argument("--seed", type=int, default=0)
    lc.add_argument("--eps", type=float, default=1e-5)
    lc.add_argument("--margin", type=float, default=losses.DEFAULT_MARGIN)
    lc.set_defaults(func=cmd_losscheck)

    sm = sub.add_parser("sample", help="emit training batches as JSON lines")
    sm.add_argument("--strategy", choices=[s.value for s in Strategy], default="random")
    sm.add_argument("--annotations")
    sm.add_argument("--split", help="restrict P-K sampling to train rows")
    sm.add_argument("--n", type=int)
    sm.add_argument("--batch-size", type=int, default=128)
    sm.add_argument("--P", type=int, default=16)
    sm.add_argument("--K", type=int, default=4)
    sm.add_argument("--epochs", type=int, default=1)
    sm.add_argument("--seed", type=int, default=0)
    sm.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationFailed as exc:
        print(f"validation failed:\n{exc}", file=sys.stderr)
        return EXIT_INVALID
    except SchemaError as exc:
        print(f"invalid schema: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, FormatError, ParseError, DimensionMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PiqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
