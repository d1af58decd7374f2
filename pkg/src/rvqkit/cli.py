"""Command-line surface tying the library into reproducible experiments.

Subcommands: train, encode, decode, analyze, mlm-sim, arnar-sim. All output
is line-oriented `key: value` text; every command is deterministic given
--seed. Exit codes: 0 success, 2 usage error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import io as rvqio
from .analytics import rank_frequency, utilization
from .arnar import (
    CyclingArModel,
    GenConfig,
    OracleArModel,
    OracleNarModel,
    generate_text_to_tokens,
    train_ngram_ar,
)
from .errors import EmptyGenerationError, FormatError, NumericalError
from .mlm import DecodeSchedule, OracleScoreModel, UniformScoreModel, generate_parallel
from .rvq import TokenStream, bitrate_bps, code_bits, rvq_decode_batch, rvq_encode_batch
from .training import (
    SCHEME_PROJECTED,
    CorpusSpec,
    TrainConfig,
    make_corpus,
    train_quantizer,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_ENCODE_CHUNK = 1024  # frames per worker unit; fixed so results ignore --threads


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(_fmt(v) for v in value) + "]"
    return str(value)


def _emit(key: str, value) -> None:
    print(f"{key}: {_fmt(value)}")


def _parse_synth_spec(text: str, seed: int, latent_dim: int) -> CorpusSpec:
    fields = {"modes": 8, "dims": latent_dim, "sep": 4.0, "count": 1024}
    for part in text.split(","):
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"--synth entry {part!r} is not key=value")
        key, raw = part.split("=", 1)
        if key not in fields:
            raise UsageError(f"--synth key {key!r} unknown (use modes,dims,sep,count)")
        fields[key] = float(raw) if key == "sep" else int(raw)
    if fields["dims"] != latent_dim:
        raise UsageError(f"--synth dims={fields['dims']} conflicts with --latent-dim {latent_dim}")
    return CorpusSpec(
        kind="gaussian_mixture",
        num_components=fields["modes"],
        dims=fields["dims"],
        separation=fields["sep"],
        count=fields["count"],
        seed=seed,
    )


def _parse_cfg_range(text: str) -> tuple[float, float]:
    try:
        start, end = text.split(":")
        return float(start), float(end)
    except ValueError as exc:
        raise UsageError(f"--cfg must look like START:END, got {text!r}") from exc


def cmd_train(args) -> int:
    if (args.corpus is None) == (args.synth is None):
        raise UsageError("exactly one of --corpus or --synth is required")
    scheme = args.scheme.replace("-", "_")
    if scheme != SCHEME_PROJECTED and args.quant_dim is not None:
        raise UsageError("--quant-dim only applies to --scheme projected")
    if scheme == SCHEME_PROJECTED and args.quant_dim is None:
        raise UsageError("--scheme projected requires --quant-dim")
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")

    if args.corpus is not None:
        corpus = make_corpus(CorpusSpec(kind="file", path=args.corpus))
    else:
        corpus = make_corpus(_parse_synth_spec(args.synth, args.seed, args.latent_dim))
    if corpus.shape[1] != args.latent_dim:
        raise FormatError(
            f"corpus dim {corpus.shape[1]} does not match --latent-dim {args.latent_dim}"
        )

    config = TrainConfig(
        scheme=scheme,
        num_layers=args.layers,
        codebook_size=args.codebook_size,
        latent_dim=args.latent_dim,
        quant_dim=args.quant_dim,
        metric=args.metric,
        decay=args.decay,
        commitment_weight=args.commitment_weight,
        codebook_weight=args.codebook_weight,
        learning_rate=args.learning_rate,
        steps=args.steps,
        batch_size=args.batch_size,
        seed=args.seed,
        restart_period=args.restart_period,
        init=args.init,
    )
    try:
        quantizer, report = train_quantizer(corpus, config)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    rvqio.save_quantizer(args.out, quantizer)

    _emit("scheme", scheme)
    _emit("metric", quantizer.metric)
    _emit("layers", quantizer.num_layers)
    _emit("codebook_size", quantizer.codebook_size)
    _emit("latent_dim", quantizer.latent_dim)
    _emit("quant_dim", quantizer.quant_dim)
    _emit("steps", args.steps)
    _emit("final_mse", float(report.mse[-1]))
    for i, frac in enumerate(report.utilization, start=1):
        _emit(f"layer_{i}_utilization", float(frac))
    _emit("out", args.out)
    return EXIT_OK


def _encode_frames(quantizer, vectors: np.ndarray, threads: int) -> np.ndarray:
    if vectors.shape[0] == 0:
        return np.empty((0, quantizer.num_layers), dtype=np.int32)
    chunks = [
        vectors[lo : lo + _ENCODE_CHUNK] for lo in range(0, vectors.shape[0], _ENCODE_CHUNK)
    ]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: rvq_encode_batch(c, quantizer)[0], chunks))
    else:
        parts = [rvq_encode_batch(c, quantizer)[0] for c in chunks]
    return np.concatenate(parts, axis=0)


def cmd_encode(args) -> int:
    quantizer = rvqio.load_quantizer(args.codebook)
    vectors = rvqio.read_vectors(args.input).astype(np.float64)
    if vectors.shape[0] and vectors.shape[1] != quantizer.latent_dim:
        raise FormatError(
            f"input dim {vectors.shape[1]} does not match codebook latent dim "
            f"{quantizer.latent_dim}"
        )
    if args.token_rate <= 0:
        raise UsageError("--token-rate must be positive")

    frames = _encode_frames(quantizer, vectors, args.threads)
    stream = TokenStream(
        frames=frames,
        token_rate_hz=args.token_rate,
        layers=quantizer.num_layers,
        codebook_size=quantizer.codebook_size,
        source_id=args.id,
    )
    rvqio.write_token_streams(args.out, [stream])

    k = quantizer.codebook_size
    bits = code_bits(k)
    _emit("frames", frames.shape[0])
    _emit("layers", quantizer.num_layers)
    _emit("token_rate_hz", float(args.token_rate))
    _emit("bits_per_frame", quantizer.num_layers * bits)
    if k & (k - 1):
        _emit("bit_accounting", f"codebook size {k} is not a power of two; using ceil(log2 K) = {bits} bits per code")
    _emit("bitrate_bps", bitrate_bps(quantizer, args.token_rate))
    _emit("out", args.out)
    return EXIT_OK


def cmd_decode(args) -> int:
    quantizer = rvqio.load_quantizer(args.codebook)
    streams = rvqio.read_token_streams(args.tokens)
    total = 0
    parts = []
    for stream in streams:
        if stream.layers != quantizer.num_layers:
            raise FormatError(
                f"stream {stream.source_id!r} has {stream.layers} layers, codebook has "
                f"{quantizer.num_layers}"
            )
        if stream.codebook_size != quantizer.codebook_size:
            raise FormatError(
                f"stream {stream.source_id!r} codebook_size {stream.codebook_size} does not "
                f"match codebook {quantizer.codebook_size}"
            )
        if stream.num_frames:
            parts.append(rvq_decode_batch(stream.frames, quantizer))
            total += stream.num_frames
    if parts:
        vectors = np.concatenate(parts, axis=0)
    else:
        vectors = np.empty((0, quantizer.latent_dim))
    rvqio.write_vectors(args.out, vectors)
    _emit("frames", total)
    _emit("dim", quantizer.latent_dim)
    _emit("out", args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    streams = []
    for path in args.tokens:
        streams.extend(rvqio.read_token_streams(path))
    if not streams:
        raise FormatError("no token streams found in the given files")
    if args.layer < 1:
        raise UsageError("--layer is 1-based and must be >= 1")
    try:
        report = utilization(streams, args.layer - 1)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    table = rank_frequency(report)

    if args.format == "json-lines":
        import json

        summary = {
            "layer": args.layer,
            "total_frames": report.total_frames,
            "used_codes": report.used_codes,
            "utilization_fraction": report.utilization_fraction,
            "entropy_bits": report.entropy_bits,
            "perplexity": report.perplexity,
        }
        print(json.dumps(summary, separators=(",", ":")))
        for rank, count in table:
            print(json.dumps({"rank": rank, "count": count}, separators=(",", ":")))
        return EXIT_OK

    _emit("layer", args.layer)
    _emit("total_frames", report.total_frames)
    _emit("used_codes", report.used_codes)
    _emit("utilization_fraction", report.utilization_fraction)
    _emit("entropy_bits", report.entropy_bits)
    _emit("perplexity", report.perplexity)
    print("rank\tcount")
    for rank, count in table:
        print(f"{rank}\t{count}")
    return EXIT_OK


def cmd_mlm_sim(args) -> int:
    if args.prompt_frames >= args.frames:
        raise UsageError("--prompt-frames must be smaller than --frames")
    if args.prompt_frames < 0:
        raise UsageError("--prompt-frames must be non-negative")
    cfg_start, cfg_end = _parse_cfg_range(args.cfg)

    rng = np.random.default_rng(args.seed)
    truth = rng.integers(0, args.codebook_size, size=(args.frames, args.layers), dtype=np.int32)
    condition = rng.integers(0, 512, size=args.frames)

    if args.model == "oracle":
        model = OracleScoreModel(
            truth, margin=args.margin, noise_seed=args.noise_seed, codebook_size=args.codebook_size
        )
    else:
        model = UniformScoreModel(args.frames, args.codebook_size)

    prompt = TokenStream(
        frames=truth[: args.prompt_frames],
        token_rate_hz=args.token_rate,
        layers=args.layers,
        codebook_size=args.codebook_size,
        source_id="mlm-sim",
    )
    schedule = DecodeSchedule(
        iterations_layer1=args.iterations,
        mask_block_size=args.block_size,
        cfg_start=cfg_start,
        cfg_end=cfg_end,
        temperature=args.temperature,
        rng_seed=args.seed,
    )
    stream, stats = generate_parallel(model, condition, prompt, args.frames, schedule)
    rvqio.write_token_streams(args.out, [stream])
    if args.truth_out:
        truth_stream = TokenStream(
            frames=truth,
            token_rate_hz=args.token_rate,
            layers=args.layers,
            codebook_size=args.codebook_size,
            source_id="mlm-sim",
        )
        rvqio.write_token_streams(args.truth_out, [truth_stream])

    _emit("model", args.model)
    _emit("frames", args.frames)
    _emit("layers", args.layers)
    _emit("iterations_layer1", args.iterations)
    _emit("forward_passes", stats.forward_passes)
    _emit("unconditional_passes", stats.unconditional_passes)
    _emit("commit_counts", stats.commit_counts)
    _emit("out", args.out)
    return EXIT_OK


def cmd_arnar_sim(args) -> int:
    if args.ar == "ngram" and not args.train_tokens:
        raise UsageError("--ar ngram requires --train-tokens")
    if args.prompt_frames < 0:
        raise UsageError("--prompt-frames must be non-negative")
    if args.prompt_frames >= args.max_frames:
        raise UsageError("--prompt-frames must be smaller than --max-frames")

    rng = np.random.default_rng(args.seed)
    truth = rng.integers(0, args.codebook_size, size=(args.max_frames, args.layers), dtype=np.int32)
    condition = rng.integers(0, 512, size=args.max_frames)

    if args.ar == "oracle":
        ar = OracleArModel(truth[args.prompt_frames :, 0], args.codebook_size, margin=args.margin)
    elif args.ar == "cycling":
        ar = CyclingArModel(args.codebook_size, margin=args.margin)
    else:
        train_streams = rvqio.read_token_streams(args.train_tokens)
        if not train_streams:
            raise FormatError(f"{args.train_tokens}: no streams to train the n-gram model on")
        if train_streams[0].codebook_size != args.codebook_size:
            raise FormatError(
                f"--codebook-size {args.codebook_size} does not match training streams "
                f"({train_streams[0].codebook_size})"
            )
        ar = train_ngram_ar(train_streams, order=args.ngram_order, smoothing=args.ngram_smoothing)

    # NAR ground truth is aligned with the generated span (post-prompt frames).
    nar = OracleNarModel(
        truth[args.prompt_frames :], codebook_size=args.codebook_size, margin=args.margin
    )
    prompt = TokenStream(
        frames=truth[: args.prompt_frames],
        token_rate_hz=args.token_rate,
        layers=args.layers,
        codebook_size=args.codebook_size,
        source_id="arnar-sim",
    )
    config = GenConfig(
        temperature=args.temperature,
        max_frames=args.max_frames - args.prompt_frames,
        rng_seed=args.seed,
    )
    stream, stats = generate_text_to_tokens(ar, nar, condition, prompt, config)
    rvqio.write_token_streams(args.out, [stream])

    _emit("ar_model", args.ar)
    _emit("nar_model", args.nar)
    _emit("temperature", float(args.temperature))
    _emit("frames", stream.num_frames)
    _emit("ar_steps", stats.ar_steps)
    _emit("nar_passes", stats.nar_passes)
    if args.support:
        support_streams = rvqio.read_token_streams(args.support)
        support = set()
        for s in support_streams:
            support.update(int(c) for c in s.frames[:, 0])
        layer1 = stream.frames[:, 0]
        outside = sum(1 for c in layer1 if int(c) not in support)
        _emit("out_of_support_rate", outside / max(1, len(layer1)))
    _emit("out", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvqkit",
        description="Residual vector quantization toolkit: training, coding, analytics, "
        "and token-generation simulators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a quantizer on a corpus")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus", help="vector file to train on")
    src.add_argument("--synth", help="synthetic mixture spec: modes=..,dims=..,sep=..,count=..")
    p.add_argument("--scheme", choices=["ema", "ema-restart", "projected"], default="ema")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--codebook-size", type=int, default=256)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--quant-dim", type=int, default=None)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default=None)
    p.add_argument("--decay", type=float, default=0.99)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--commitment-weight", type=float, default=0.25)
    p.add_argument("--codebook-weight", type=float, default=1.0)
    p.add_argument("--restart-period", type=int, default=100)
    p.add_argument("--init", choices=["kmeans", "random"], default="kmeans")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("encode", help="encode a vector file into token streams")
    p.add_argument("--codebook", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--token-rate", type=float, default=50.0)
    p.add_argument("--id", default="corpus")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_encode)

    p = sub.add_parser("decode", help="decode token streams back to vectors")
    p.add_argument("--codebook", required=True)
    p.add_argument("--tokens", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("analyze", help="code utilization and rank-frequency statistics")
    p.add_argument("--tokens", nargs="+", required=True)
    p.add_argument("--layer", type=int, default=1, help="1-based layer index")
    p.add_argument("--format", choices=["text", "json-lines"], default="text")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("mlm-sim", help="masked parallel generation against a toy score model")
    p.add_argument("--model", choices=["oracle", "uniform"], default="oracle")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--codebook-size", type=int, default=1024)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--block-size", type=int, default=5)
    p.add_argument("--cfg", default="0:2", help="guidance coefficients START:END")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompt-frames", type=int, default=0)
    p.add_argument("--token-rate", type=float, default=50.0)
    p.add_argument("--margin", type=float, default=50.0)
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", default=None, help="also dump the hidden reference grid")
    p.set_defaults(handler=cmd_mlm_sim)

    p = sub.add_parser("arnar-sim", help="AR + NAR generation against toy models")
    p.add_argument("--ar", choices=["oracle", "ngram", "cycling"], default="oracle")
    p.add_argument("--nar", choices=["oracle"], default="oracle")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-frames", type=int, default=60)
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--codebook-size", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompt-frames", type=int, default=0)
    p.add_argument("--token-rate", type=float, default=50.0)
    p.add_argument("--margin", type=float, default=50.0)
    p.add_argument("--ngram-order", type=int, default=2)
    p.add_argument("--ngram-smoothing", type=float, default=0.1)
    p.add_argument("--train-tokens", default=None)
    p.add_argument("--support", default=None, help="token file whose layer-1 codes define support")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_arnar_sim)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, EmptyGenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
