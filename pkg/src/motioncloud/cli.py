"""Command line entry point: ``motioncloud <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Progress goes to
standard error, results to standard output.
"""
import argparse
import contextlib
import fcntl
import json
import logging
import os
import sys

from . import geometry, indexer, pipeline, synth, synth_eval
from .classifier import AlphaParams, MetricParams, baseline_knn
from .eigenspace import DEFAULT_K, EigenspaceError
from .templates import TemplateError, load_sequence, sequence_templates

log = logging.getLogger("motioncloud")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@contextlib.contextmanager
def writer_lock(target):
    """Advisory lock next to ``target`` so only one writer touches it."""
    path = os.path.normpath(target) + ".lock"
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise RuntimeError(f"{target} is locked by another writer") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _degree(text):
    if text == "auto":
        return text
    try:
        d = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a positive integer") from None
    if d < 1:
        raise argparse.ArgumentTypeError("degree must be >= 1")
    return d


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _metric_flags(p):
    p.add_argument("--alpha-variant", choices=("peaked", "literal"), default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)


def _model_flags(p):
    p.add_argument("--kernel", choices=("linear", "poly"), default="poly")
    p.add_argument("--degree", type=_degree, default=2, help="'auto' or N (poly kernel)")
    p.add_argument("--kernel-offset", type=float, default=1.0)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K, help="retained eigen dimensions")


def build_parser():
    parser = _Parser(prog="motioncloud", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{train,index,query,classify,synth,eval,export,serve}",
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic action dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model from a dataset directory")
    p.add_argument("--data", required=True)
    _model_flags(p)
    _metric_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("index", help="index a long clip with a sliding window")
    p.add_argument("--model", required=True)
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--window", type=_positive_int, default=250)
    p.add_argument("--stride", type=_positive_int, default=50)
    p.add_argument("--index", help="existing index to extend (other videos are kept)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("query", help="rank indexed windows by similarity to a clip")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--top", type=_positive_int, default=10)
    p.add_argument("--rho", type=float, default=None)

    p = sub.add_parser("classify", help="classify one clip")
    p.add_argument("--model", required=True)
    p.add_argument("--clip-dir", required=True)
    _metric_flags(p)
    p.add_argument("--knn-k", type=_positive_int, default=7)

    p = sub.add_parser("eval", help="cloud classifier vs KNN, leave-one-clip-per-class-out")
    p.add_argument("--data", help="dataset directory (default: generate in memory)")
    _model_flags(p)
    _metric_flags(p)
    p.add_argument("--knn-k", type=_positive_int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the report JSON here")

    p = sub.add_parser("export", help="write a clip's trajectory CSV and signature JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--clip-dir", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("serve", help="HTTP query service")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--port", type=int, default=8080)
    return parser


def _metric(base, args):
    a = base.alpha
    alpha = AlphaParams(
        a.beta,
        a.lambda1 if args.lambda1 is None else args.lambda1,
        a.lambda2 if args.lambda2 is None else args.lambda2,
        a.variant if args.alpha_variant is None else args.alpha_variant,
    )
    rho = base.rho if args.rho is None else args.rho
    return MetricParams(alpha, rho, base.fuzzy, base.normalize_by_radii)


def load_dataset(data_dir, config=pipeline.PipelineConfig()):
    """``(label, clip_id, features)`` for ``<data>/<class>/<clip>/`` frame directories."""
    if not os.path.isdir(data_dir):
        raise TemplateError(f"missing dataset directory: {data_dir}")
    items = []
    for label in sorted(os.listdir(data_dir)):
        cdir = os.path.join(data_dir, label)
        if not os.path.isdir(cdir):
            continue
        for cid in sorted(os.listdir(cdir)):
            if not os.path.isdir(os.path.join(cdir, cid)):
                continue
            seq = load_sequence(os.path.join(cdir, cid))
            log.info("templates %s/%s (%d frames)", label, cid, len(seq))
            t = sequence_templates(seq, config.flow)
            items.append((label, cid, pipeline.features(t, config.downsample)))
    if not items:
        raise TemplateError(f"no clips under {data_dir}")
    return items


def cmd_synth(args):
    with writer_lock(args.out):
        clips = synth.generate_clips(synth.SynthSpec(seed=args.seed), args.out)
    print(json.dumps({"out": args.out, "clips": len(clips)}))


def cmd_train(args):
    cfg = pipeline.PipelineConfig(metric=_metric(MetricParams(), args))
    items = load_dataset(args.data, cfg)
    model = pipeline.train_model(items, args.kernel, args.degree, args.kernel_offset, args.k, cfg)
    with writer_lock(args.out):
        pipeline.save_action_model(model, args.out)
    out = {"out": args.out, "kernel": model.eigen.kind, "degree": model.eigen.degree,
           "K": model.eigen.K, "clips": len(model.clouds), "classes": model.classes}
    if getattr(model, "degree_curve", None):
        out["degree_curve"] = {str(k): v for k, v in model.degree_curve.items()}
    print(json.dumps(out, sort_keys=True))


def cmd_index(args):
    model = pipeline.load_action_model(args.model)
    cfg = indexer.IndexerConfig(args.window, args.stride)
    seq = load_sequence(args.clip_dir)
    records = indexer.index_timeline(seq, model, cfg, seq.name)
    if args.index:
        kept = [r for r in indexer.load_index(args.index) if r.video_id != seq.name]
        records = kept + records
    with writer_lock(args.out):
        indexer.save_index(records, args.out, model.eigen.K)
    print(json.dumps({"out": args.out, "video_id": seq.name, "records": len(records)}))


def cmd_query(args):
    model = pipeline.load_action_model(args.model)
    records = indexer.load_index(args.index)
    res = indexer.query_similarity(load_sequence(args.clip_dir), model, records, args.top, args.rho)
    print(json.dumps({
        "null_query": res.null_query,
        "results": [{"video_id": h.video_id, "window": [h.start_frame, h.end_frame],
                     "similarity_pct": h.similarity, "predicted_class": h.predicted_class}
                    for h in res.hits],
    }, sort_keys=True))


def cmd_classify(args):
    model = pipeline.load_action_model(args.model)
    metric = _metric(model.config.metric, args)
    traj, sig = pipeline.clip_signature(model, load_sequence(args.clip_dir), with_local=metric.rho > 0)
    if model.is_null(sig):
        print(json.dumps({"null": True, "class": None}))
        return
    cls, scores = model.classify(sig, metric)
    ref, labels = model.knn_reference()
    kcls, frac = baseline_knn(traj.points, ref, labels, min(args.knn_k, len(ref)))
    print(json.dumps({
        "null": False, "class": cls, "scores": scores,
        "similarity": {c: model.similarity(d) for c, d in scores.items()},
        "knn": {"class": kcls, "fraction": frac},
    }, sort_keys=True))


def cmd_eval(args):
    cfg = pipeline.PipelineConfig(metric=_metric(MetricParams(), args), train_stride=2)
    if args.data:
        items = load_dataset(args.data, cfg)
    else:
        log.info("generating synthetic clips (seed %d)", args.seed)
        items = synth_eval.clip_features(synth.generate_clips(synth.SynthSpec(seed=args.seed)), cfg)
    rep = synth_eval.compare_classifiers(items, args.kernel, args.degree, args.kernel_offset,
                                         args.k, cfg, args.knn_k)
    out = {
        "tpc_accuracy": rep.tpc_accuracy,
        "knn_accuracy": rep.knn_accuracy,
        "tpc_confusion": rep.tpc.to_dict(),
        "knn_confusion": rep.knn.to_dict(),
        "rows": [list(r) for r in rep.rows],
    }
    text = json.dumps(out, sort_keys=True)
    if args.out:
        with writer_lock(args.out):
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
    print(text)


def cmd_export(args):
    model = pipeline.load_action_model(args.model)
    traj, sig = pipeline.clip_signature(model, load_sequence(args.clip_dir))
    os.makedirs(args.out, exist_ok=True)
    geometry.export_trajectory_csv(os.path.join(args.out, "trajectory.csv"), traj)
    geometry.export_signature_json(os.path.join(args.out, "signature.json"), sig)
    print(json.dumps({"out": args.out, "points": len(traj)}))


def cmd_serve(args):
    from .service import serve

    model = pipeline.load_action_model(args.model)
    records = indexer.load_index(args.index)
    serve(model, records, args.port)


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "index": cmd_index, "query": cmd_query,
    "classify": cmd_classify, "eval": cmd_eval, "export": cmd_export, "serve": cmd_serve,
}


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError, EigenspaceError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
