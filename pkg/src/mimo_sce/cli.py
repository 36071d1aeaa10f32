"""Command-line entry point: ``mimo-sce <subcommand> [flags]``.

Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 protocol or
transport error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL, EXIT_NUMERIC = 0, 1, 2, 3, 4
CONFIG_VERSION = 1
CONFIG_KEYS = {"version", "seed", "manifest", "model", "train", "stream"}
STREAM_KEYS = {"chunk", "quantize"}

log = logging.getLogger("mimo_sce")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    """Read a JSON run config, refusing newer versions and unknown keys."""
    if path is None:
        return {"version": CONFIG_VERSION}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise CliError("config must be a JSON object")
    version = data.get("version")
    if not isinstance(version, int):
        raise CliError("config is missing an integer 'version' field")
    if version > CONFIG_VERSION:
        raise CliError(f"config version {version} is newer than supported version {CONFIG_VERSION}")
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    unknown = set(data.get("stream", {})) - STREAM_KEYS
    if unknown:
        raise CliError(f"unknown stream config keys: {sorted(unknown)}")
    if "manifest" in data:
        data["manifest"] = str((Path(path).parent / data["manifest"]).resolve())
    return data


def _model_config(cfg: dict, args):
    from .model import ConfigError, ModelConfig
    try:
        mc = ModelConfig.from_dict(cfg.get("model", {}))
        overrides = {k: getattr(args, k) for k in ("variant", "mode", "filters", "bottleneck", "channels")
                     if getattr(args, k, None) is not None}
        return replace(mc, **overrides)
    except (ConfigError, TypeError) as exc:
        raise CliError(str(exc))


def _train_config(cfg: dict, args):
    from .training import TrainConfig
    try:
        tc = TrainConfig.from_dict(cfg.get("train", {}))
        overrides = {"steps": args.steps, "learning_rate": args.lr, "batch_size": args.batch_size,
                     "checkpoint_every": args.checkpoint_every, "segment": args.segment, "hop": args.hop}
        overrides = {k: v for k, v in overrides.items() if v is not None}
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is not None:
            overrides["seed"] = seed
        return replace(tc, **overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(str(exc))


def _stream_opts(cfg: dict, args) -> tuple[int, bool]:
    stream = cfg.get("stream", {})
    chunk = args.chunk if args.chunk is not None else stream.get("chunk", 4096)
    quantize = args.quantize or bool(stream.get("quantize", False))
    if not isinstance(chunk, int) or chunk < 1:
        raise CliError(f"chunk must be a positive integer, got {chunk!r}")
    return chunk, quantize


def _seed(cfg: dict, args) -> int:
    return args.seed if args.seed is not None else cfg.get("seed", 0)


def _manifest(cfg: dict, args):
    from .data import DatasetManifest
    path = getattr(args, "manifest", None) or cfg.get("manifest")
    if path is None:
        raise CliError("a dataset manifest is required (--manifest or 'manifest' in --config)")
    return DatasetManifest.load(path)


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise CliError(f"--{name.replace('_', '-')} is required for '{args.command}'")


# ---------------------------------------------------------------- commands

def cmd_simulate(args, cfg) -> int:
    from .data import MicGeometry, read_wav, simulate_array, write_wav
    from .data.signals import Waveform
    from .data.synth import make_corpus
    geometry = MicGeometry.load(args.geometry) if args.geometry else MicGeometry.ring7()
    _require(args, "out")
    if args.corpus:
        m = make_corpus(args.out, n_train=args.n_train, n_test=args.n_test, seed=_seed(cfg, args),
                        duration=args.duration, geometry=geometry)
        print(f"wrote {len(m.entries)} manifest entries to {Path(args.out) / 'manifest.json'}")
        return EXIT_OK
    _require(args, "in_path")
    src, out = Path(args.in_path), Path(args.out)
    jobs = [(p, out / p.name) for p in sorted(src.glob("*.wav"))] if src.is_dir() else [(src, out)]
    if src.is_dir():
        out.mkdir(parents=True, exist_ok=True)
    for inp, dst in jobs:
        wav = read_wav(inp)
        if not isinstance(wav, Waveform):
            raise CliError(f"{inp} is not mono", EXIT_DATA)
        write_wav(simulate_array(wav, geometry), dst)
    print(f"simulated {len(jobs)} file(s) with {geometry.channels} microphones")
    return EXIT_OK


def cmd_mix(args, cfg) -> int:
    from .data import MixSpec, mix_at_snr, read_multichannel, read_wav, write_wav
    from .data.dataset import synthesize_pairs
    _require(args, "out")
    if args.noise is not None:
        _require(args, "in_path", "snr")
        clean = read_multichannel(args.in_path)
        noise = read_wav(args.noise)
        spec = MixSpec(Path(args.noise).stem, args.snr, _seed(cfg, args))
        write_wav(mix_at_snr(clean, noise.channel(0) if hasattr(noise, "channel") else noise, spec), args.out)
        return EXIT_OK
    if args.in_path and args.manifest is None:
        args.manifest = args.in_path
    manifest = _manifest(cfg, args)
    out = Path(args.out)
    count = 0
    for entry, noisy, clean in synthesize_pairs(manifest, args.split, _seed(cfg, args)):
        if args.snr is not None and entry.snr_db != args.snr:
            continue
        stem = f"{Path(entry.clean).stem}_{entry.noise_id}_{entry.snr_db:g}dB"
        (out / "noisy").mkdir(parents=True, exist_ok=True)
        (out / "clean").mkdir(parents=True, exist_ok=True)
        write_wav(noisy, out / "noisy" / f"{stem}.wav")
        write_wav(clean, out / "clean" / f"{stem}.wav")
        count += 1
    print(f"wrote {count} {args.split} mixtures to {out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .training import train_loop
    _require(args, "out")
    manifest = _manifest(cfg, args)
    mc, tc = _model_config(cfg, args), _train_config(cfg, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # the resolved config (file + flag overrides) is itself a valid --config
    run = {"version": CONFIG_VERSION, "seed": tc.seed, "manifest": str(manifest.root / "manifest.json"),
           "model": mc.to_dict(), "train": tc.to_dict()}
    (out / "config.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")
    result = train_loop(manifest, mc, tc, out, resume=args.resume)
    last = result.losses[-1] if result.losses else float("nan")
    print(f"trained {tc.steps} steps (from {result.start_step}); final loss {last:.6g}; checkpoint {result.checkpoint}")
    return EXIT_OK


def _load_model(args):
    from .model import load_checkpoint
    _require(args, "model")
    return load_checkpoint(args.model)


def cmd_enhance(args, cfg) -> int:
    from .data import read_multichannel, write_wav
    from .data.signals import MultichannelSignal
    _require(args, "in_path", "out")
    model, mc = _load_model(args)
    sig = read_multichannel(args.in_path)
    if sig.channels != mc.channels or sig.sample_rate != mc.sample_rate:
        raise CliError(f"input is {sig.channels} ch @ {sig.sample_rate} Hz, model expects "
                       f"{mc.channels} ch @ {mc.sample_rate} Hz", EXIT_DATA)
    out = model.forward(sig.as_tensor())[0]
    write_wav(MultichannelSignal(out, sig.sample_rate), args.out)
    return EXIT_OK


def cmd_encode(args, cfg) -> int:
    from .wire import run_edge
    _require(args, "model", "in_path")
    chunk, quantize = _stream_opts(cfg, args)
    stats = run_edge(args.model, args.in_path, connect=args.connect, chunk_len=chunk, quantize=quantize,
                     follow=args.follow)
    print(stats.to_json(), file=sys.stderr)
    return EXIT_OK


def cmd_decode(args, cfg) -> int:
    from .wire import run_server
    _require(args, "model", "out")
    run_server(args.model, args.out, listen=args.listen, stats_path=args.stats, streams=args.streams)
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from .metrics import MetricsReport, score_channels
    from .data.dataset import synthesize_pairs
    _require(args, "out")
    if args.in_path and args.manifest is None:
        args.manifest = args.in_path
    manifest = _manifest(cfg, args)
    model, mc = _load_model(args)
    system = args.system or f"MIMO-SCE({mc.variant[0]})"
    rows = []
    for entry, noisy, clean in synthesize_pairs(manifest, args.split, _seed(cfg, args)):
        if args.snr is not None and entry.snr_db != args.snr:
            continue
        est = model.forward(noisy.as_tensor())[0]
        ref = clean.samples[:mc.out_channels]
        utt = Path(entry.clean).stem
        rows += score_channels("Noisy", utt, entry.noise_id, entry.snr_db, ref, noisy.samples[:mc.out_channels],
                               clean.sample_rate, with_stoi=not args.no_stoi)
        rows += score_channels(system, utt, entry.noise_id, entry.snr_db, ref, est, clean.sample_rate,
                               with_stoi=not args.no_stoi)
    if not rows:
        raise CliError(f"no {args.split} mixtures matched", EXIT_DATA)
    report = MetricsReport(rows)
    if args.pesq:
        report.merge_pesq(args.pesq)
    report.write(args.out)
    print(report.render())
    return EXIT_OK


def cmd_gradcheck(args, cfg) -> int:
    from .core.gradcheck import standard_suite
    results = standard_suite(seed=_seed(cfg, args))
    for res in results:
        for rep in res.reports:
            print(f"[{res.target}] {rep.line()}")
    ok = all(r.passed for r in results)
    print("gradcheck: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_info(args, cfg) -> int:
    from .model import file_crc
    model, mc = _load_model(args)
    info = {
        "variant": mc.variant,
        "mode": mc.mode,
        "channels": mc.channels,
        "bottleneck": mc.bottleneck,
        "compression_ratio": mc.compression_ratio,
        "parameters": model.parameter_count(),
        "receptive_field": {"encoder_half_width": mc.encoder_context, "decoder_half_width": mc.decoder_context,
                            "total_samples": 2 * (mc.encoder_context + mc.decoder_context) + 1},
        "sample_rate": mc.sample_rate,
        "model_crc": f"{file_crc(args.model):08x}",
        "config": mc.to_dict(),
    }
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        print(f"{mc.mode}-SCE({mc.variant[0]}) {mc.variant}: N={mc.channels} C_num={mc.bottleneck} "
              f"R_comp={mc.compression_ratio:g}")
        print(f"parameters: {info['parameters']}")
        print(f"receptive field: encoder +-{mc.encoder_context}, decoder +-{mc.decoder_context}, "
              f"end-to-end {info['receptive_field']['total_samples']} samples")
        print(f"checkpoint crc32: {info['model_crc']}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "mix": cmd_mix, "train": cmd_train, "enhance": cmd_enhance,
    "encode": cmd_encode, "decode": cmd_decode, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "info": cmd_info,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="mimo-sce", description="Multichannel speech compression and enhancement.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    s = add("simulate", "mono WAV(s) -> array-simulated multichannel WAV(s), or a synthetic corpus")
    s.add_argument("--in", dest="in_path")
    s.add_argument("--out")
    s.add_argument("--geometry", help="JSON microphone geometry (default: 7-mic ring)")
    s.add_argument("--corpus", action="store_true", help="write a synthetic corpus and manifest to --out")
    s.add_argument("--n-train", type=int, default=50)
    s.add_argument("--n-test", type=int, default=10)
    s.add_argument("--duration", type=float, default=1.0)

    s = add("mix", "noisy/clean multichannel pairs from a manifest (or one clean file + --noise)")
    s.add_argument("--in", dest="in_path")
    s.add_argument("--manifest")
    s.add_argument("--noise")
    s.add_argument("--snr", type=float)
    s.add_argument("--split", default="train", choices=("train", "test"))
    s.add_argument("--out")

    s = add("train", "train a model on a manifest")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--resume", action="store_true")
    s.add_argument("--variant", choices=("FCN", "SFCN"))
    s.add_argument("--mode", choices=("MIMO", "MISO"))
    s.add_argument("--channels", type=int)
    s.add_argument("--filters", type=int)
    s.add_argument("--bottleneck", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--segment", type=int)
    s.add_argument("--hop", type=int)
    s.add_argument("--checkpoint-every", type=int)

    s = add("enhance", "offline enhancement of a multichannel WAV")
    s.add_argument("--model")
    s.add_argument("--in", dest="in_path")
    s.add_argument("--out")

    s = add("encode", "edge endpoint: stream the latent to --connect or stdout")
    s.add_argument("--model")
    s.add_argument("--in", dest="in_path")
    s.add_argument("--connect", metavar="HOST:PORT")
    s.add_argument("--chunk", type=int)
    s.add_argument("--quantize", action="store_true")
    s.add_argument("--follow", action="store_true", help="read a WAV file that is still being written")

    s = add("decode", "server endpoint: read the latent from --listen or stdin, write enhanced WAV")
    s.add_argument("--model")
    s.add_argument("--out")
    s.add_argument("--listen", metavar="HOST:PORT")
    s.add_argument("--streams", type=int, default=1, help="connections to serve concurrently (with --listen)")
    s.add_argument("--stats", help="write bandwidth stats JSON here (default: stdout)")

    s = add("eval", "score a model on the manifest's held-out mixtures")
    s.add_argument("--model")
    s.add_argument("--in", dest="in_path", help="manifest path (alias of --manifest)")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--snr", type=float)
    s.add_argument("--system", help="system name in the report")
    s.add_argument("--pesq", help="CSV of externally computed PESQ scores to merge")
    s.add_argument("--no-stoi", action="store_true")

    add("gradcheck", "finite-difference check of every differentiable primitive")

    s = add("info", "checkpoint summary")
    s.add_argument("--model")
    s.add_argument("--json", action="store_true")
    return p


def _exit_code(exc: BaseException) -> int:
    from .data import ManifestError, MixError, WavError
    from .metrics import MetricError, ReportError
    from .model import CheckpointError, ConfigError
    from .training import NumericError
    from .wire import ProtocolError
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, (ProtocolError, ConnectionError, BrokenPipeError, TimeoutError)):
        return EXIT_PROTOCOL
    if isinstance(exc, (NumericError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (WavError, ManifestError, MixError, CheckpointError, ConfigError, MetricError, ReportError,
                        OSError, ValueError)):
        return EXIT_DATA
    return EXIT_DATA


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # one-line diagnostic, typed exit code
        code = _exit_code(exc)
        if isinstance(exc, BrokenPipeError):
            # the reader went away; keep the interpreter from failing again on flush
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        print(f"mimo-sce {args.command}: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return code


def main(argv=None) -> None:
    sys.exit(run_cli(argv))


def edge_main(argv=None) -> None:
    sys.exit(run_cli(["encode"] + list(sys.argv[1:] if argv is None else argv)))


def server_main(argv=None) -> None:
    sys.exit(run_cli(["decode"] + list(sys.argv[1:] if argv is None else argv)))


if __name__ == "__main__":
    main()
