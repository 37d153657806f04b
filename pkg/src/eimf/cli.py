"""Command line entry point: ``eimf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

log = logging.getLogger("eimf")

SUBCOMMANDS = ("synth", "prepare", "embed", "cluster", "infer", "train", "eval", "serve")


def _write_json(path: str | Path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _encoder(pipe):
    from eimf.textenc import make_encoder

    return make_encoder(pipe.provider, pipe.train.d_t, pipe.provider_seed, pipe.embeddings_path)


def _pipeline_config(args):
    from eimf.config import load_pipeline_config

    overrides = {
        "train.max_steps": getattr(args, "steps", None),
        "train.seed": getattr(args, "seed", None),
        "train.d": getattr(args, "dim", None),
        "train.d_t": getattr(args, "d_t", None),
        "loss.alpha": getattr(args, "alpha", None),
        "loss.beta": getattr(args, "beta", None),
        "loss.gamma": getattr(args, "gamma", None),
        "loss.tau": getattr(args, "tau", None),
        "text.provider": getattr(args, "provider", None),
        "text.embeddings": getattr(args, "embeddings_file", None),
        "text.seed": getattr(args, "text_seed", None),
    }
    return load_pipeline_config(getattr(args, "config", None), overrides)


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> None:
    from eimf.synth import write_synthetic

    ip, cp = write_synthetic(args.out, n_users=args.users, n_items=args.items, n_topics=args.topics, seed=args.seed)
    log.info("wrote %s and %s", ip, cp)


def cmd_prepare(args) -> None:
    from eimf.dataset import load_interactions, save_prepared, split_users

    ds = load_interactions(args.interactions, args.catalog)
    split = split_users(ds, args.seed)
    save_prepared(args.out, ds, split)
    log.info("%d users, %d items -> train/valid/test = %d/%d/%d",
             len(ds.users), ds.catalog.n_items, len(split.train), len(split.valid), len(split.test))


def cmd_embed(args) -> None:
    from eimf.dataset import load_prepared
    from eimf.pipeline import embed_sequences
    from eimf.textenc import save_embeddings

    pipe = _pipeline_config(args)
    ds, split = load_prepared(args.dataset)
    users = split.part(args.split)
    vecs = embed_sequences(ds, users, _encoder(pipe))
    save_embeddings(args.out, [u.user_id for u in users], vecs)
    log.info("embedded %d %s sequences (d_t=%d)", len(users), args.split, vecs.shape[1])


def cmd_cluster(args) -> None:
    from eimf.apcluster import cluster_embeddings
    from eimf.textenc import load_embeddings_ordered

    keys, vecs = load_embeddings_ordered(args.embeddings)
    if not keys:
        raise ValueError("no embeddings to cluster")
    res = cluster_embeddings(vecs, args.preference, args.damping, args.max_iter, args.conv_window)
    _write_json(args.out, {
        "preference": args.preference,
        "exemplars": list(res.exemplars),
        "assignment": {k: int(e) for k, e in zip(keys, res.assignment)},
        "members": keys,
        "converged": res.converged,
        "iterations": res.iterations_run,
    })
    log.info("%d members -> %d exemplars (converged=%s, %d iterations)", len(keys), res.n_clusters, res.converged, res.iterations_run)


def _cluster_doc(path):
    from eimf.apcluster import ClusterResult

    doc = _read_json(path)
    members = doc.get("members") or list(doc["assignment"])
    result = ClusterResult(
        tuple(int(e) for e in doc["exemplars"]),
        tuple(int(doc["assignment"][m]) for m in members),
        bool(doc["converged"]),
        int(doc["iterations"]),
    )
    return members, result


def cmd_infer(args) -> None:
    from eimf.dataset import load_prepared
    from eimf.esim import ChatClient, MockLLM, build_prompt, infer_exemplar_interests, write_interests

    pipe = _pipeline_config(args)
    ds, _ = load_prepared(args.dataset)
    members, result = _cluster_doc(args.clusters)
    by_id = ds.by_id()
    cat = ds.catalog
    prompts = {}
    for e in result.exemplars:
        seq = by_id[members[e]].items
        prompts[e] = build_prompt([cat.names[i] for i in seq], [cat.raw_ids[i] for i in seq])
    if args.mock or pipe.mock:
        client = MockLLM()
    else:
        endpoint = args.endpoint or pipe.llm_endpoint
        if not endpoint:
            raise ValueError("no LLM endpoint configured (use --endpoint, [llm] endpoint, or --mock)")
        client = ChatClient(endpoint, args.model or pipe.llm_model)
    texts = infer_exemplar_interests(client, prompts, args.max_interests, max_in_flight=args.concurrency)
    write_interests(args.out, texts)
    log.info("inferred interests for %d exemplars", len(texts))


def cmd_train(args) -> None:
    from eimf.checkpoint import save_checkpoint
    from eimf.dataset import load_prepared
    from eimf.esim import read_interests
    from eimf.pipeline import item_text_matrix, user_interest_sets
    from eimf.trainer import build_semantic_data, train

    pipe = _pipeline_config(args)
    cfg = pipe.train
    ds, split = load_prepared(args.dataset)
    semantic = None
    if args.clusters and args.interests:
        members, result = _cluster_doc(args.clusters)
        by_id = ds.by_id()
        users = [by_id[m] for m in members]
        encoder = _encoder(pipe)
        sets = user_interest_sets(users, result, read_interests(args.interests), encoder, cfg.max_interests)
        semantic = build_semantic_data(sets, item_text_matrix(ds, encoder), cfg.max_interests)
    elif cfg.loss.gamma > 0:
        raise ValueError("gamma > 0 needs --clusters and --interests")
    ckpt = train(split.train, ds.catalog.n_items, cfg, semantic, split.valid)
    save_checkpoint(args.out, ckpt)
    log.info("saved checkpoint at step %d to %s", ckpt.step, args.out)


def cmd_eval(args) -> None:
    from eimf.checkpoint import load_checkpoint
    from eimf.dataset import load_prepared
    from eimf.metrics import evaluate

    ckpt = load_checkpoint(args.checkpoint)
    _, split = load_prepared(args.dataset)
    ks = [int(k) for k in str(args.k).split(",") if k.strip()]
    report = evaluate(ckpt, split.part(args.split), ks, args.exclude_seen)
    doc = report.to_dict()
    _write_json(args.out, doc)
    log.info("%s", json.dumps(doc["metrics"], sort_keys=True))


def cmd_serve(args) -> None:
    from eimf.checkpoint import load_checkpoint
    from eimf.dataset import load_catalog
    from eimf.retrieval import serve

    serve(load_checkpoint(args.checkpoint), load_catalog(args.catalog), args.bind, args.exclude_seen)


# -- parser ------------------------------------------------------------------

def _train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML file with [train], [loss], [cluster], [text], [llm] sections")
    p.add_argument("--steps", type=int, help="override train.max_steps")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--dim", type=int, help="override train.d")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)


def _text_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=["builtin", "file"], help="text embedding provider")
    p.add_argument("--embeddings-file", help="precomputed text embeddings (file provider)")
    p.add_argument("--d-t", dest="d_t", type=int, help="text embedding width")
    p.add_argument("--text-seed", type=int, help="hashing seed of the builtin provider")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eimf", description="Multi-interest sequential recommendation with LLM-derived semantic interests.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("synth", help="generate the synthetic topic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--topics", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="load logs, split users 8:1:1, write dataset files")
    p.add_argument("--interactions", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("embed", help="encode users' item-name sequences")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="train", choices=["train", "valid", "test"])
    p.add_argument("--config")
    _text_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="affinity propagation over sequence embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--preference", type=float, default=-10.0)
    p.add_argument("--damping", type=float, default=0.5)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--conv-window", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("infer", help="ask the LLM (or the mock) for exemplar interests")
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--config")
    p.add_argument("--mock", action="store_true", help="use the deterministic offline client")
    p.add_argument("--endpoint", help="chat-completion URL")
    p.add_argument("--model", help="model name sent to the endpoint")
    p.add_argument("--max-interests", type=int, default=20)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="joint training")
    _train_overrides(p)
    _text_options(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--clusters")
    p.add_argument("--interests")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Recall/NDCG/HR on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--k", default="20,50")
    p.add_argument("--exclude-seen", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP retrieval service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--exclude-seen", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    from eimf.config import ConfigError

    try:
        args.func(args)
    except ConfigError as exc:
        print(f"eimf {args.command}: invalid config field {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("traceback", exc_info=True)
        print(f"eimf {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
