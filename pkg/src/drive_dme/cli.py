"""Command-line frontend.

Exit codes: 0 success, 1 usage error, 2 data error.  Output files are written
atomically, so nothing is left behind on failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .codec.wire import EncodedMessage, WireError, parse_vector, vector_bytes
from .levels import equal_interval_levels, lloyd_max_levels
from .quantizer import sse_closed_form
from .simulator import (
    ClientConfig,
    ExperimentConfig,
    LossModel,
    decode_client,
    encode_client,
    run_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_atomic(path: str, data: bytes) -> None:
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or Path("."), prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        os.unlink(tmp)
        raise


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc


def _seed(value: str) -> int:
    s = int(value, 0)
    if not 0 <= s < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return s


def _u32(value: str) -> int:
    v = int(value, 0)
    if not 0 <= v < 1 << 32:
        raise argparse.ArgumentTypeError("value must fit in 32 bits")
    return v


# -- levels -----------------------------------------------------------------


def cmd_levels(args) -> int:
    if args.kind == "lloyd":
        try:
            z = int(args.value)
        except ValueError:
            raise UsageError(f"level count must be an integer, got {args.value!r}")
        if z < 1:
            raise UsageError("level count must be >= 1")
        ls = lloyd_max_levels(z)
        head = [f"# lloyd_max z={z}"]
    else:
        try:
            b = float(args.value)
        except ValueError:
            raise UsageError(f"bit budget must be a number, got {args.value!r}")
        if not b > 0 or not math.isfinite(b):
            raise UsageError("bit budget must be positive")
        try:
            ls = equal_interval_levels(b, epsilon=args.epsilon)
        except ValueError as exc:
            raise UsageError(str(exc))
        head = [f"# equal_interval b={b:.17g} epsilon={args.epsilon:.17g}",
                f"# delta={ls.params['delta']:.17g} n_max={ls.params['n_max']}"]
    head += [f"# entropy_bits={ls.entropy_bits:.17g}",
             f"# expected_sq_error={ls.expected_sq_error:.17g}",
             "# level\tprobability"]
    text = "\n".join(head + [ls.table()]) + "\n"
    if args.out:
        _write_atomic(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- compress / decompress --------------------------------------------------


def cmd_compress(args) -> int:
    try:
        x = parse_vector(_read(args.input))
    except WireError as exc:
        raise DataError(str(exc))
    if x.size == 0:
        raise DataError("vector file is empty")
    if not np.all(np.isfinite(x)):
        raise DataError("vector contains non-finite values")
    try:
        cfg = ClientConfig(
            client_id=args.client, bits=args.bits, scale_mode=args.scale,
            entropy_mode=args.entropy, rotation=args.rotation, rounds=args.rounds,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    try:
        enc = encode_client(x, cfg, args.round, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    msg = enc.message
    data = msg.to_bytes()
    _write_atomic(args.out, data)
    norm_sq = float(np.dot(x, x))
    if enc.quantized is not None and norm_sq > 0:
        v = sse_closed_form(norm_sq, enc.rotated, enc.quantized, msg.scale) / norm_sq
    else:
        v = 0.0 if norm_sq == 0 else 1.0
    print(
        f"d={msg.d} D={msg.D} bytes={len(data)} "
        f"bits_per_coord={8 * len(data) / msg.d:.6f} scale={msg.scale:.17g} vnmse={v:.17g}"
    )
    return EXIT_OK


def cmd_decompress(args) -> int:
    try:
        msg = EncodedMessage.from_bytes(_read(args.input))
        x_hat = decode_client(msg, args.seed)
    except ValueError as exc:
        raise DataError(str(exc))
    _write_atomic(args.out, vector_bytes(x_hat))
    print(f"d={msg.d} client={msg.client_id} round={msg.round}")
    return EXIT_OK


# -- experiment -------------------------------------------------------------

_LIST_KEYS = ("bits", "dim", "clients", "loss_p")
_CONFIG_KEYS = {
    "clients", "dim", "bits", "scale", "entropy", "rotation", "rounds", "selection",
    "repeats", "seed", "inputs", "input_file", "loss", "loss_p", "drops",
    "payload_bytes", "header_copies", "compensate_loss",
}
_DEFAULTS = {
    "clients": "10", "dim": "1024", "bits": "1", "scale": "unbiased", "entropy": "false",
    "rotation": "hadamard", "rounds": "1", "selection": "first", "repeats": "100",
    "seed": "0", "inputs": "lognormal_identical", "loss": "none", "loss_p": "0",
    "drops": "", "payload_bytes": "1024", "header_copies": "1", "compensate_loss": "true",
}


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def _list(value: str, conv):
    try:
        return [conv(v) for v in value.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"bad list value {value!r}")


def _dim(v: str) -> int:
    return int(float(v)) if "^" not in v else 2 ** int(v.split("^")[1])


def build_grid(settings: dict[str, str]) -> list[tuple[dict, ExperimentConfig]]:
    s = {**_DEFAULTS, **settings}
    try:
        bits_list = _list(s["bits"], float)
        dims = _list(s["dim"], _dim)
        ns = _list(s["clients"], int)
        ps = _list(s["loss_p"], float)
        repeats, seed = int(s["repeats"]), int(s["seed"], 0)
        rounds, payload, copies = int(s["rounds"]), int(s["payload_bytes"]), int(s["header_copies"])
        drops = [tuple(int(t) for t in item.split(":")) for item in s["drops"].split()]
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}")
    if not (bits_list and dims and ns and ps):
        raise UsageError("bits, dim, clients and loss_p need at least one value")
    vectors = None
    if s["inputs"] == "file":
        if "input_file" not in s:
            raise UsageError("inputs = file needs input_file")
        raw = _read(s["input_file"])
        try:
            vectors = parse_vector(raw)
        except WireError as exc:
            raise DataError(str(exc))
    grid = []
    for b, d, n, p in itertools.product(bits_list, dims, ns, ps):
        if s["loss"] == "iid":
            loss = LossModel.iid(p)
        elif s["loss"] == "adversarial":
            loss = LossModel.adversarial(drops)
        elif s["loss"] == "none":
            loss = LossModel()
        else:
            raise UsageError(f"unknown loss model {s['loss']!r}")
        try:
            client = ClientConfig(
                bits=b, scale_mode=s["scale"], entropy_mode=_bool(s["entropy"]),
                rotation=s["rotation"], rounds=rounds, selection=s["selection"],
            )
            vecs = None
            if vectors is not None:
                if vectors.size % d:
                    raise DataError(f"input file holds {vectors.size} values, not a multiple of d={d}")
                vecs = vectors.reshape(-1, d)
            cfg = ExperimentConfig(
                clients=n, dim=d, inputs=s["inputs"], repeats=repeats, global_seed=seed,
                loss=loss, client=client, payload_bytes=payload, header_copies=copies,
                compensate_loss=_bool(s["compensate_loss"]), input_vectors=vecs,
            )
        except ValueError as exc:
            raise UsageError(str(exc))
        grid.append(({"bits": b, "dim": d, "clients": n, "loss_p": p}, cfg))
    return grid


def cmd_experiment(args) -> int:
    settings = parse_config(_read(args.config).decode()) if args.config else {}
    for key in ("bits", "dim", "clients", "loss_p", "repeats", "payload_bytes", "scale"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = str(value)
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    if args.entropy:
        settings["entropy"] = "true"
    if args.loss_p is not None and settings.get("loss", "none") == "none":
        settings["loss"] = "iid"
    grid = build_grid(settings)

    rows = io.StringIO()
    writer = csv.writer(rows, lineterminator="\n")
    writer.writerow(["bits", "dim", "clients", "loss_p", "repeat", "nmse", "bits_per_coord", "lost_fraction"])
    summary = {"settings": {**_DEFAULTS, **settings}, "results": []}
    for point, cfg in grid:
        report = run_experiment(cfg)
        for r in report.repeats:
            writer.writerow([
                repr(point["bits"]), point["dim"], point["clients"], repr(point["loss_p"]),
                r.repeat, repr(r.nmse), repr(r.bits_per_coord), repr(r.lost_fraction),
            ])
        summary["results"].append({**point, **report.summary()})
        print(
            f"bits={point['bits']} dim={point['dim']} clients={point['clients']} "
            f"loss_p={point['loss_p']} mean_nmse={report.mean_nmse:.6g}"
        )
    _write_atomic(args.out + ".csv", rows.getvalue().encode())
    _write_atomic(args.out + ".json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drive-dme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("levels", help="print or write a quantization level table")
    p.add_argument("kind", choices=("lloyd", "equal"))
    p.add_argument("value", help="level count z (lloyd) or bit budget b (equal)")
    p.add_argument("--epsilon", type=float, default=0.0, help="entropy margin for equal-interval sets")
    p.add_argument("--out")
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("compress", help="encode a DVEC vector file into a message")
    p.add_argument("input")
    p.add_argument("--bits", type=float, required=True)
    p.add_argument("--scale", choices=("unbiased", "minvnmse"), default="unbiased")
    p.add_argument("--entropy", action="store_true")
    p.add_argument("--rotation", choices=("hadamard", "uniform"), default="hadamard")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--client", type=_u32, default=0)
    p.add_argument("--round", type=_u32, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode a message into a DVEC vector file")
    p.add_argument("input")
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("experiment", help="run the client/server simulation, write CSV + JSON")
    p.add_argument("config", nargs="?", help="flat key = value config file")
    p.add_argument("--bits", help="bit budget, or comma-separated sweep")
    p.add_argument("--dim", help="dimension, or comma-separated sweep")
    p.add_argument("--clients", help="client count, or comma-separated sweep")
    p.add_argument("--loss-p", dest="loss_p", help="iid packet loss probability, or sweep")
    p.add_argument("--payload-bytes", dest="payload_bytes", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--scale", choices=("unbiased", "minvnmse"))
    p.add_argument("--entropy", action="store_true")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"drive-dme: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"drive-dme: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
