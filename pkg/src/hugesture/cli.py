"""Command-line interface: simulate, process, train, eval, stream, export-image.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys
import time
from collections import deque
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .echosim import (GESTURES, HEADER_SIZE, STREAM_FRAME_COUNT, DatasetConfig, FormatError,
                      decode_frame, decode_header, frame_nbytes, load_manifest, read_recording,
                      synth_dataset)
from .hmm import ClassifierBank, classify
from .params import InvalidParams
from .pipeline import EvalReport, TrainConfig, evaluate_fold, train_fold
from .rdproc import FrameProcessor, RdCube, read_cube, write_cube, write_pgm
from .symbolizer import SymbolDictionary, symbolize
from .tracker import FeatureTracker, TrackerConfig, format_features, parse_features, track_recording

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
PROCESSED_INDEX = "processed.json"
PROCESSED_FORMAT = "hugesture-processed"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def resolve_seed(cli_seed: Optional[int], fallback: int = 0) -> int:
    """--seed wins, then HUG_SEED, then ``fallback``."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("HUG_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HUG_SEED must be an integer, got {env!r}")
    return fallback


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})")


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fresh_dir(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()) and not force:
        raise DataError(f"output directory {path} is not empty (use --force)")
    path.mkdir(parents=True, exist_ok=True)


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    doc = doc.get("dataset", doc)
    try:
        cfg = DatasetConfig.reference_split() if args.reference_split else DatasetConfig()
        cfg = DatasetConfig.from_dict({**cfg.to_dict(), **doc})
    except (ValueError, InvalidParams, TypeError) as e:
        raise DataError(f"{args.config}: {e}")
    if args.subjects is not None:
        cfg.subjects = args.subjects
    if args.samples is not None:
        cfg.samples_per_class = {g: args.samples for g in GESTURES}
    if args.snr is not None:
        cfg.snr_db = None if args.snr.lower() == "none" else float(args.snr)
    if args.kinematics is not None:
        cfg.kinematics = args.kinematics
    cfg.seed = resolve_seed(args.seed, cfg.seed)
    out = Path(args.out)
    try:
        manifest = synth_dataset(cfg, out, force=args.force, jobs=args.jobs)
    except FileExistsError as e:
        raise DataError(f"{e}".replace("(use force)", "(use --force)"))
    _log(f"wrote {len(manifest['recordings'])} recordings and {out / 'manifest.json'}")
    return EXIT_OK


# --- process ----------------------------------------------------------------

def _stem(entry_path: str) -> str:
    p = Path(entry_path)
    return str(p.parent.relative_to("recordings") / p.stem) if p.parts[0] == "recordings" else str(p.with_suffix(""))


def _tracker_cfg(path) -> Optional[TrackerConfig]:
    if not path:
        return None
    try:
        return TrackerConfig.from_dict(_read_json(path))
    except (TypeError, ValueError) as e:
        raise DataError(f"{path}: {e}")


def cmd_process(args) -> int:
    manifest_path = Path(args.manifest)
    try:
        manifest = load_manifest(manifest_path)
    except FileNotFoundError:
        raise DataError(f"{manifest_path}: no such file")
    except (ValueError, json.JSONDecodeError) as e:
        raise DataError(f"{manifest_path}: {e}")
    root = manifest_path.parent
    out = Path(args.out)
    _fresh_dir(out, args.force)
    tcfg = _tracker_cfg(args.tracker_config)
    processors = {}
    items, failures = [], 0
    t0, frames = time.perf_counter(), 0
    for entry in manifest["recordings"]:
        src = root / entry["path"]
        stem = _stem(entry["path"])
        try:
            rec = read_recording(src)
            if rec.params not in processors:
                processors[rec.params] = FrameProcessor(rec.params)
            proc = processors[rec.params]
            images = [proc(fr, i) for i, fr in enumerate(rec.frames)]
        except (FormatError, OSError, ValueError) as e:
            _log(f"error: {src}: {e}")
            failures += 1
            continue
        cube = RdCube(rec.params, images, rec.label, rec.subject)
        feats = track_recording(cube, tcfg)
        item = {"path": entry["path"], "label": entry["label"], "subject": entry["subject"],
                "frames": len(images), "features": f"features/{stem}.feat"}
        _write_text(out / item["features"], format_features(feats))
        if not args.no_cubes:
            item["cube"] = f"cubes/{stem}.hugc"
            (out / item["cube"]).parent.mkdir(parents=True, exist_ok=True)
            write_cube(out / item["cube"], cube)
        if args.export_frames:
            k = min(args.export_frames, len(images))
            picks = np.unique(np.linspace(0, len(images) - 1, k).round().astype(int)) if k else []
            for fi in picks:
                dst = out / "frames" / f"{stem}_f{fi:03d}.pgm"
                dst.parent.mkdir(parents=True, exist_ok=True)
                write_pgm(dst, images[fi])
        items.append(item)
        frames += len(images)
    index = {"format": PROCESSED_FORMAT, "version": 1, "manifest": manifest_path.name,
             "params": manifest["params"],
             "tracker": (tcfg or TrackerConfig()).to_dict(), "items": items}
    _write_text(out / PROCESSED_INDEX, json.dumps(index, sort_keys=True, indent=1) + "\n")
    dt = time.perf_counter() - t0
    _log(f"processed {len(items)} recordings ({frames} frames, {frames / max(dt, 1e-9):.0f} frames/s)"
         + (f"; {failures} failed" if failures else ""))
    return EXIT_DATA if failures else EXIT_OK


def load_processed(directory) -> tuple[dict, list[dict]]:
    """Read a processed index and attach parsed feature sequences to each item."""
    d = Path(directory)
    index = _read_json(d / PROCESSED_INDEX)
    if index.get("format") != PROCESSED_FORMAT:
        raise DataError(f"{d / PROCESSED_INDEX}: not a processed-dataset index")
    tcfg = TrackerConfig.from_dict(index["tracker"])
    items = []
    for it in index["items"]:
        it = dict(it)
        fpath = d / it["features"]
        if fpath.exists():
            it["features"] = parse_features(fpath.read_text())
        elif it.get("cube") and (d / it["cube"]).exists():
            it["features"] = track_recording(read_cube(d / it["cube"]), tcfg)
        else:
            raise DataError(f"missing cubes: neither {fpath} nor a cube for {it['path']} exists")
        items.append(it)
    if not items:
        raise DataError(f"{d}: no processed recordings")
    return index, items


# --- train ------------------------------------------------------------------

def _fold_name(subject) -> str:
    return "full" if subject == "full" else f"fold_s{int(subject):02d}"


def cmd_train(args) -> int:
    _, items = load_processed(args.processed)
    subjects = sorted({it["subject"] for it in items})
    if args.folds:
        try:
            wanted = [int(s) for s in args.folds.split(",")]
        except ValueError:
            raise UsageError("--folds takes a comma-separated list of subject numbers")
        missing = set(wanted) - set(subjects)
        if missing:
            raise DataError(f"no recordings for subject(s) {sorted(missing)}")
        subjects = wanted
    if len({it["subject"] for it in items}) < 2 and not args.full:
        raise DataError("leave-one-subject-out needs at least two subjects")
    tc = TrainConfig(hidden_states=args.hidden_states, iterations=args.iterations,
                     smoothing=args.smoothing, seed=resolve_seed(args.seed), prior=args.prior,
                     left_to_right=not args.uniform_init)
    out = Path(args.out)
    _fresh_dir(out, args.force)
    summary = {"format": "hugesture-training", "version": 1, "config": tc.to_dict(), "folds": []}
    targets = list(subjects) + (["full"] if args.full else [])
    for s in targets:
        bank, dictionary = train_fold(items, -1 if s == "full" else s, tc)
        name = _fold_name(s)
        bank.save(out / f"{name}.hugb")
        _write_text(out / f"{name}.dict", dictionary.to_text())
        summary["folds"].append({"held_out": s, "bank": f"{name}.hugb", "dictionary": f"{name}.dict",
                                 "alphabet_size": dictionary.alphabet_size,
                                 "dictionary_hash": dictionary.hash})
        _log(f"{name}: alphabet size {dictionary.alphabet_size}, "
             f"bank {(out / f'{name}.hugb').stat().st_size} bytes")
    _write_text(out / "training.json", json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return EXIT_OK


# --- eval -------------------------------------------------------------------

def _load_fold(models: Path, subject: int):
    name = _fold_name(subject)
    bpath, dpath = models / f"{name}.hugb", models / f"{name}.dict"
    if not bpath.exists() or not dpath.exists():
        raise DataError(f"no fold bank for subject {subject} in {models}")
    try:
        bank = ClassifierBank.load(bpath)
        dictionary = SymbolDictionary.from_text(dpath.read_text())
    except (ValueError, KeyError) as e:
        raise DataError(f"{bpath}: {e}")
    if bank.dictionary_hash != dictionary.hash:
        raise DataError(f"fold/bank mismatch: {bpath} was trained against a different dictionary "
                        f"than {dpath}")
    held = bank.meta.get("held_out_subject")
    if held is not None and str(held) != str(subject):
        raise DataError(f"fold/bank mismatch: {bpath} holds out subject {held}, not {subject}")
    return bank, dictionary


def cmd_eval(args) -> int:
    _, items = load_processed(args.processed)
    models = Path(args.models)
    classes = GESTURES
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    folds = []
    t0 = time.perf_counter()
    frames = 0
    for s in sorted({it["subject"] for it in items}):
        bank, dictionary = _load_fold(models, s)
        if tuple(bank.classes) != classes:
            raise DataError(f"bank for subject {s} has classes {bank.classes}")
        pairs = evaluate_fold(items, s, bank, dictionary, classes)
        for a, p in pairs:
            confusion[a, p] += 1
        folds.append({"subject": s, "correct": sum(a == p for a, p in pairs), "total": len(pairs)})
        frames += sum(it["frames"] for it in items if it["subject"] == s)
    dt = time.perf_counter() - t0
    report = EvalReport(classes, confusion, folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.json", report.to_json())
    _write_text(out / "report.txt", report.to_text())
    # timing varies run to run, so it stays out of the reproducible reports
    report.throughput = {"classification_seconds": round(dt, 6),
                         "gestures_per_second": round(report.total / max(dt, 1e-9), 3),
                         "frames_per_second": round(frames / max(dt, 1e-9), 3)}
    _write_text(out / "throughput.json", json.dumps(report.throughput, sort_keys=True, indent=1) + "\n")
    sys.stdout.write(report.to_text())
    return EXIT_OK


# --- stream -----------------------------------------------------------------

def _read_exact(fh, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        b = fh.read(n - got)
        if not b:
            break
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)


class StreamClassifier:
    """Rolling tracker plus a sliding window of the last ``window`` symbols."""

    def __init__(self, params, bank: ClassifierBank, dictionary: SymbolDictionary,
                 window: int = 30, tracker_cfg: Optional[TrackerConfig] = None):
        if bank.dictionary_hash != dictionary.hash:
            raise DataError("model bank and dictionary do not match")
        self.processor = FrameProcessor(params)
        self.tracker = FeatureTracker(params, tracker_cfg)
        self.bank = bank
        self.dictionary = dictionary
        self.symbols = deque(maxlen=window)

    def push(self, frame: np.ndarray, index: int):
        """Returns (posterior, argmax) once the window is full, else None."""
        fv = self.tracker.update(self.processor(frame, index))
        self.symbols.append(self.dictionary.encode(fv.key()))
        if len(self.symbols) < self.symbols.maxlen:
            return None
        return classify(self.bank, np.fromiter(self.symbols, dtype=np.int64))


def run_stream(fh, out, bank: ClassifierBank, dictionary: SymbolDictionary, window: int = 30,
               threshold: float = 0.8, tracker_cfg: Optional[TrackerConfig] = None) -> int:
    """Consume one HUGR stream from binary file ``fh``; write events to ``out``.

    Returns the number of frames consumed. Raises FormatError on a bad
    header or a truncated frame.
    """
    head = _read_exact(fh, HEADER_SIZE)
    params, count, _, _ = decode_header(head)
    nb = frame_nbytes(params)
    sc = StreamClassifier(params, bank, dictionary, window, tracker_cfg)
    classes = bank.classes
    i = 0
    while count == STREAM_FRAME_COUNT or i < count:
        buf = _read_exact(fh, nb)
        if not buf:
            if count != STREAM_FRAME_COUNT:
                raise FormatError(f"stream ended after {i} of {count} frames", HEADER_SIZE + i * nb)
            break
        if len(buf) < nb:
            raise FormatError(f"truncated frame {i}", HEADER_SIZE + i * nb + len(buf))
        res = sc.push(decode_frame(buf, params), i)
        if res is not None:
            post, k = res
            if post[k] > threshold:
                out.write(f"{i} {classes[k]} {post[k]:.4f}\n")
                out.flush()
        i += 1
    return i


def cmd_stream(args) -> int:
    if not 0 <= args.threshold < 1:
        raise UsageError("--threshold must be in [0, 1)")
    if args.window < 1:
        raise UsageError("--window must be >= 1")
    bank_path = Path(args.bank)
    dict_path = Path(args.dictionary) if args.dictionary else bank_path.with_suffix(".dict")
    try:
        bank = ClassifierBank.load(bank_path)
        dictionary = SymbolDictionary.from_text(dict_path.read_text())
    except FileNotFoundError as e:
        raise DataError(f"{e.filename}: no such file")
    except (ValueError, KeyError) as e:
        raise DataError(f"{bank_path}: {e}")
    tcfg = _tracker_cfg(args.tracker_config)
    t0 = time.perf_counter()
    if args.listen is not None:
        with socket.create_server(("127.0.0.1", args.listen)) as srv:
            _log(f"listening on 127.0.0.1:{srv.getsockname()[1]}")
            conn, _ = srv.accept()
            with conn, conn.makefile("rb") as fh:
                n = run_stream(fh, sys.stdout, bank, dictionary, args.window, args.threshold, tcfg)
    else:
        src = open(args.input, "rb") if args.input else sys.stdin.buffer
        try:
            n = run_stream(src, sys.stdout, bank, dictionary, args.window, args.threshold, tcfg)
        finally:
            if args.input:
                src.close()
    dt = time.perf_counter() - t0
    _log(f"stream: {n} frames in {dt:.3f} s ({n / max(dt, 1e-9):.1f} frames/s)")
    return EXIT_OK


# --- export-image -----------------------------------------------------------

def cmd_export_image(args) -> int:
    src = Path(args.input)
    try:
        if src.suffix == ".hugc":
            cube = read_cube(src)
            if not 0 <= args.frame < len(cube):
                raise UsageError(f"frame {args.frame} out of range (cube has {len(cube)})")
            image = cube.images[args.frame]
        else:
            rec = read_recording(src)
            if not 0 <= args.frame < len(rec.frames):
                raise UsageError(f"frame {args.frame} out of range (recording has {len(rec.frames)})")
            image = FrameProcessor(rec.params)(rec.frames[args.frame], args.frame)
    except FileNotFoundError:
        raise DataError(f"{src}: no such file")
    except FormatError as e:
        raise DataError(f"{src}: {e}")
    write_pgm(args.out, image, args.dynamic_range)
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hugesture", description="Ultrasonic micro hand-gesture pipeline on synthetic echoes.")
    p.add_argument("--version", action="version", version=f"hugesture {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a synthetic gesture dataset")
    s.add_argument("--config", help="dataset config JSON (a manifest works too)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="dataset seed (default: HUG_SEED, then config)")
    s.add_argument("--subjects", type=int)
    s.add_argument("--samples", type=int, help="recordings per class per subject")
    s.add_argument("--snr", help="per-sample SNR in dB, or 'none' for noise-free")
    s.add_argument("--kinematics", choices=["default", "exaggerated"])
    s.add_argument("--reference-split", action="store_true", help="300 no-finger samples per subject")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--force", action="store_true", help="write into a nonempty directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("process", help="range-Doppler images and tracked features")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--export-frames", type=int, default=0, metavar="K",
                   help="also write K evenly spaced PGM frames per recording")
    s.add_argument("--no-cubes", action="store_true", help="skip writing range-Doppler cubes")
    s.add_argument("--tracker-config", help="JSON with tracker option overrides")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("train", help="leave-one-subject-out fold banks")
    s.add_argument("processed", help="directory written by 'process'")
    s.add_argument("--out", required=True)
    s.add_argument("--folds", help="comma-separated held-out subjects (default: all)")
    s.add_argument("--full", action="store_true", help="also train a bank on every subject")
    s.add_argument("--hidden-states", type=int, default=6)
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--smoothing", type=float, default=1e-3)
    s.add_argument("--prior", choices=["uniform", "no-finger-weighted"], default="uniform")
    s.add_argument("--uniform-init", action="store_true", help="no left-to-right transition bias")
    s.add_argument("--seed", type=int)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="classify held-out subjects and write reports")
    s.add_argument("processed")
    s.add_argument("models")
    s.add_argument("--out", required=True, help="report directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("stream", help="classify a live HUGR frame stream")
    s.add_argument("--bank", required=True)
    s.add_argument("--dictionary", help="default: bank path with .dict suffix")
    s.add_argument("--input", help="read from a file instead of standard input")
    s.add_argument("--listen", type=int, metavar="PORT", help="accept one TCP connection on localhost")
    s.add_argument("--window", type=int, default=30)
    s.add_argument("--threshold", type=float, default=0.8)
    s.add_argument("--tracker-config")
    s.set_defaults(func=cmd_stream)

    s = sub.add_parser("export-image", help="write one range-Doppler frame as 16-bit PGM")
    s.add_argument("input", help=".hugr recording or .hugc cube")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--dynamic-range", type=float, default=60.0, help="dB mapped onto the grey scale")
    s.set_defaults(func=cmd_export_image)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        _log(f"hugesture {args.command}: {e}")
        return EXIT_USAGE
    except DataError as e:
        _log(f"hugesture {args.command}: {e}")
        return EXIT_DATA
    except FormatError as e:
        _log(f"hugesture {args.command}: malformed input: {e}")
        return EXIT_DATA
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
