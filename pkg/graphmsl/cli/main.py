import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from graphmsl.scripts.dataio import (
    EmbeddingTable,
    load_checkpoint,
    load_embeddings,
    load_molecules,
    load_peaks,
    save_checkpoint,
    save_embeddings,
    save_loss_history,
)
from graphmsl.scripts.encoder import EncoderConfig, embed_pool
from graphmsl.scripts.errors import ConfigError, DataError, GraphMSLError, NonConvergenceError
from graphmsl.scripts.evalkit import ProbeConfig, linear_probe, retrieval_check, summarize_probes
from graphmsl.scripts.fingerprint import ecfp_batch, load_fingerprints, save_fingerprints
from graphmsl.scripts.loss import LatentSimilarityConfig
from graphmsl.scripts.molgraph import featurize, graph_stats
from graphmsl.scripts.similarity import (
    FUSION_PRESETS,
    MODALITIES,
    FusionWeights,
    SelfSimilarityMatrix,
    cosine_self_similarity,
    fingerprint_self_similarity,
    fuse,
    load_matrix,
    pair_weight,
    save_matrix_bin,
    save_matrix_csv,
)
from graphmsl.scripts.synthetic import write_synthetic_dataset
from graphmsl.scripts.trainer import ModalityInputs, TrainConfig, pretrain, verify_theorem
from graphmsl.scripts.utils import configure_logging, ordered_map


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 1."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.commands: dict[str, argparse.ArgumentParser] = {}

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from err


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from err


def build_parser() -> _Parser:
    """Subcommand grammar of the ``graphmsl`` executable; ``commands`` maps names to subparsers."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-dir", default="logs", help="directory for the session log")
    common.add_argument("--config", help="JSON file of flag defaults; explicit flags win")

    parser = _Parser(prog="graphmsl", description="Graph multi-similarity learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse a molecule dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--stats", action="store_true")
    p.add_argument("--strict-valence", action="store_true")
    p.add_argument("--keep-largest-fragment", action="store_true")

    p = sub.add_parser("fingerprint", parents=[common], help="write a fingerprint cache")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simmatrix", parents=[common], help="write a self-similarity matrix")
    p.add_argument("--modality", choices=MODALITIES, required=True)
    p.add_argument("--embeddings", help="embedding table (smiles, nmr, image)")
    p.add_argument("--fingerprints", help="fingerprint cache (fingerprint)")
    p.add_argument("--mols", help="molecule dataset, fingerprinted on the fly (fingerprint)")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("fuse", parents=[common], help="pair-weight and fuse self-similarity matrices")
    p.add_argument("--inputs", required=True, help="path,... or modality=path,...")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--weights", help="w_smiles,w_nmr,w_image,w_fingerprint")
    group.add_argument("--fusion-preset", choices=sorted(FUSION_PRESETS))
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")

    p = sub.add_parser("pretrain", parents=[common], help="pre-train the encoder")
    p.add_argument("--mols", required=True)
    p.add_argument("--level", choices=("graph", "node", "bilevel"), default="graph")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fusion-preset", choices=sorted(FUSION_PRESETS), default="fingerprint")
    group.add_argument("--weights")
    p.add_argument("--embeddings-smiles")
    p.add_argument("--embeddings-nmr")
    p.add_argument("--embeddings-image")
    p.add_argument("--peaks")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--tau1", type=float, default=1.0)
    p.add_argument("--tau2", type=float, default=1.0)
    p.add_argument("--latent", choices=("dot", "cosine"), default="cosine")
    p.add_argument("--latent-temp", type=float, default=0.1)
    p.add_argument("--hidden", type=int, default=300)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--readout", choices=("mean", "sum"), default="mean")
    p.add_argument("--node-pool", choices=("batch", "molecule"), default="batch")
    p.add_argument("--permissive", action="store_true")
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume")
    p.add_argument("--history", help="loss history CSV (default: next to --out)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify-theorem", parents=[common], help="numerical convergence check")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=50000)
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("embed", parents=[common], help="embed molecules with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mols", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("probe", parents=[common], help="linear probe on frozen embeddings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mols", required=True)
    p.add_argument("--task", choices=("cls", "reg"), required=True)
    p.add_argument("--split", type=_floats, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=_ints, help="several split seeds; reports mean and std")
    p.add_argument("--label-index", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("retrieval-check", parents=[common], help="latent nearest-neighbour check")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mols", required=True)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    parser.commands.update(sub.choices)
    return parser


def _apply_config_file(parser: _Parser, argv, args):
    """Re-parse with defaults taken from ``--config``; explicit flags still win."""
    try:
        defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config file {args.config}: {err}") from err
    if not isinstance(defaults, dict):
        raise ConfigError("config file must hold a JSON object")
    subparser = parser.commands[args.command]
    known = set(vars(args)) - {"command"}
    normalized = {key.lstrip("-").replace("-", "_"): value for key, value in defaults.items()}
    unknown = sorted(set(normalized) - known)
    if unknown:
        raise ConfigError(f"unknown keys in config file: {unknown}")
    subparser.set_defaults(**normalized)
    return parser.parse_args(argv)


def _emit(payload) -> None:
    print(json.dumps(payload, sort_keys=False))


def _cmd_parse(args, logger) -> int:
    pool = load_molecules(
        args.input,
        strict_valence=args.strict_valence,
        keep_largest_fragment=args.keep_largest_fragment,
        logger=logger,
    )
    for record in pool:
        if args.stats:
            _emit({"id": record.id, **graph_stats(record.graph)})
        else:
            print(f"{record.id}\t{len(record.graph.atoms)}\t{len(record.graph.bonds)}")
    return 0


def _cmd_fingerprint(args, logger) -> int:
    pool = load_molecules(args.input, logger=logger)
    fps = ecfp_batch([r.graph for r in pool], args.radius, args.bits, args.threads)
    save_fingerprints(args.out, pool.ids, fps)
    logger.info(f"Wrote {len(fps)} fingerprints to {args.out}")
    return 0


def _save_matrix(matrix, path: str, fmt: str) -> None:
    if fmt == "bin":
        save_matrix_bin(path, matrix)
    else:
        save_matrix_csv(path, matrix)


def _cmd_simmatrix(args, logger) -> int:
    if args.modality == "fingerprint":
        if args.fingerprints:
            ids, fps = load_fingerprints(args.fingerprints)
        elif args.mols:
            pool = load_molecules(args.mols, logger=logger)
            ids, fps = pool.ids, ecfp_batch([r.graph for r in pool], args.radius, args.bits, args.threads)
        else:
            raise ConfigError("fingerprint similarities need --fingerprints or --mols")
        matrix = fingerprint_self_similarity(fps, ids)
    else:
        if not args.embeddings:
            raise ConfigError(f"{args.modality} similarities need --embeddings")
        table = load_embeddings(args.embeddings, args.modality, logger=logger)
        matrix = cosine_self_similarity(table.vectors(table.ids), table.ids, args.modality, args.threads)
    _save_matrix(matrix, args.out, args.format)
    logger.info(f"Wrote {args.modality} self-similarities of {len(matrix.ids)} molecules to {args.out}")
    return 0


def _resolve_weights(args) -> FusionWeights:
    if getattr(args, "weights", None):
        return FusionWeights.parse(args.weights)
    return FusionWeights.from_preset(args.fusion_preset)


def _cmd_fuse(args, logger) -> int:
    weights = _resolve_weights(args)
    logger.info(f"Fusion weights: {weights.as_dict()}")
    targets = {}
    for position, item in enumerate(args.inputs.split(",")):
        modality, _, path = item.rpartition("=")
        ids, values, tag = load_matrix(path)
        modality = modality or tag or (MODALITIES[position] if position < len(MODALITIES) else None)
        if modality not in MODALITIES:
            raise ConfigError(f"cannot tell the modality of '{path}'; write it as modality=path")
        if modality in targets:
            raise ConfigError(f"modality '{modality}' given twice")
        S = SelfSimilarityMatrix(values=values, modality=modality, ids=ids)
        targets[modality] = pair_weight(S, exclude_self=args.exclude_self)
    fused = fuse(targets, weights)
    _save_matrix(fused, args.out, args.format)
    logger.info(f"Wrote fused targets of {len(fused.ids)} molecules to {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        level=args.level,
        fusion=_resolve_weights(args),
        seed=args.seed,
        latent=LatentSimilarityConfig(mode=args.latent, temperature=args.latent_temp),
        encoder=EncoderConfig(
            hidden_dim=args.hidden, depth=args.depth, readout=args.readout, seed=args.seed
        ),
        tau1=args.tau1,
        tau2=args.tau2,
        node_pool=args.node_pool,
        permissive=args.permissive,
        exclude_self=args.exclude_self,
        fingerprint_radius=args.radius,
        fingerprint_bits=args.bits,
    )


def _cmd_pretrain(args, logger) -> int:
    cfg = _train_config(args)
    logger.info(f"Training configuration: {json.dumps(cfg.model_dump(mode='json'), sort_keys=True)}")
    pool = load_molecules(args.mols, logger=logger)
    embeddings = {}
    for modality in ("smiles", "nmr", "image"):
        path = getattr(args, f"embeddings_{modality}")
        if path:
            embeddings[modality] = load_embeddings(path, modality, logger=logger)
    peaks = load_peaks(args.peaks, pool, logger=logger) if args.peaks else None
    resume = load_checkpoint(args.resume) if args.resume else None

    ckpt = pretrain(
        pool,
        ModalityInputs(embeddings=embeddings, peaks=peaks),
        cfg,
        resume=resume,
        max_steps=args.max_steps,
        threads=args.threads,
        logger=logger,
    )
    save_checkpoint(ckpt, args.out)
    history = args.history or str(Path(args.out).with_suffix(".loss.csv"))
    save_loss_history(history, ckpt.loss_history)
    logger.info(f"Wrote checkpoint {args.out} and loss history {history}")
    return 0


def _cmd_verify_theorem(args, logger) -> int:
    try:
        report = verify_theorem(args.n, args.trials, args.seed, args.max_steps, args.tol, logger=logger)
    except NonConvergenceError as err:
        _emit(err.report)
        raise
    _emit(report.to_dict())
    return 0


def _embeddings(args, logger):
    ckpt = load_checkpoint(args.ckpt)
    pool = load_molecules(args.mols, logger=logger)
    featurized = ordered_map(featurize, [r.graph for r in pool], args.threads)
    return pool, embed_pool(featurized, ckpt.params, ckpt.encoder_config, args.threads)


def _cmd_embed(args, logger) -> int:
    pool, vectors = _embeddings(args, logger)
    rows = {mol_id: vector for mol_id, vector in zip(pool.ids, vectors)}
    save_embeddings(args.out, EmbeddingTable(modality="latent", dim=vectors.shape[1], rows=rows))
    logger.info(f"Wrote {len(rows)} embeddings to {args.out}")
    return 0


def _cmd_probe(args, logger) -> int:
    pool, vectors = _embeddings(args, logger)
    labels = []
    for record in pool:
        if args.label_index >= len(record.labels):
            raise DataError(f"molecule '{record.id}' has no label {args.label_index}", path=args.mols)
        labels.append(record.labels[args.label_index])
    seeds = args.seeds or (args.seed,)
    results = [
        linear_probe(vectors, labels, config=ProbeConfig(task=args.task, split=args.split, seed=s), logger=logger)
        for s in seeds
    ]
    if args.seeds:
        _emit({"results": [r.to_dict() for r in results], "summary": summarize_probes(results)})
    else:
        _emit(results[0].to_dict())
    return 0


def _cmd_retrieval_check(args, logger) -> int:
    pool, vectors = _embeddings(args, logger)
    fps = ecfp_batch([r.graph for r in pool], args.radius, args.bits, args.threads)
    _emit(retrieval_check(vectors, fps, seed=args.seed).to_dict())
    return 0


def _cmd_synth(args, logger) -> int:
    paths = write_synthetic_dataset(args.out_dir, args.n, args.seed, args.dim)
    for role, path in paths.items():
        logger.info(f"Wrote {role} to {path}")
    return 0


COMMANDS = {
    "parse": _cmd_parse,
    "fingerprint": _cmd_fingerprint,
    "simmatrix": _cmd_simmatrix,
    "fuse": _cmd_fuse,
    "pretrain": _cmd_pretrain,
    "verify-theorem": _cmd_verify_theorem,
    "embed": _cmd_embed,
    "probe": _cmd_probe,
    "retrieval-check": _cmd_retrieval_check,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    """
    Run one ``graphmsl`` subcommand.

    Exit codes: 0 success, 1 usage or configuration error, 2 data error,
    3 numerical failure.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config_file(parser, argv, args)
    except ConfigError as err:
        print(f"graphmsl: error: {err}", file=sys.stderr)
        return err.exit_code

    logger = configure_logging(args.command.replace("-", "_"), args.log_dir)
    logger.info(f"Resolved configuration: {json.dumps(vars(args), sort_keys=True, default=str)}")

    try:
        return COMMANDS[args.command](args, logger)
    except ValidationError as err:
        logger.error(f"Invalid configuration: {err}")
        print(f"graphmsl: error: {err}", file=sys.stderr)
        return 1
    except GraphMSLError as err:
        logger.error(f"{type(err).__name__}: {err}")
        print(f"graphmsl: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        logger.error(f"I/O error: {err}")
        print(f"graphmsl: error: {err}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
