"""Clients, parameter server and the repeated mean-estimation experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .codec.bitpack import pack_fixed, unpack_fixed
from .codec.packets import Delivery, MessageLost, Packet, packetize, reassemble
from .codec.rangecoder import entropy_decode, entropy_encode
from .codec.wire import (
    FLAG_DEGENERATE,
    FLAG_ENTROPY,
    FLAG_SHARED_SELECTION,
    FLAG_UNIFORM,
    FLAG_ZERO,
    EncodedMessage,
    bits_to_scheme_id,
    rounds_flags,
    scheme_id_to_bits,
)
from .quantizer import (
    DegenerateScaleError,
    QuantizedVector,
    build_scheme,
    compute_scale,
    normalize_scale_mode,
    quantize,
)
from .rng import PURPOSE_INPUT, PURPOSE_LOSS, RotationSeed
from .transform import MAX_ORACLE_DIM, RotatedVector, make_rotation, next_power_of_two

IDENTICAL_INPUT_CLIENT = 0xFFFFFFFF
INPUT_KINDS = ("lognormal_identical", "lognormal_independent", "file")


@dataclass(frozen=True)
class ClientConfig:
    client_id: int = 0
    bits: float = 1.0
    scale_mode: str = "unbiased"
    entropy_mode: bool = False
    rotation: str = "hadamard"
    rounds: int = 1
    selection: str = "first"

    def __post_init__(self):
        if self.bits < 0:
            raise ValueError(f"bit budget must be >= 0, got {self.bits}")
        bits_to_scheme_id(self.bits)
        object.__setattr__(self, "scale_mode", normalize_scale_mode(self.scale_mode))
        if self.rotation == "uniform_oracle":
            object.__setattr__(self, "rotation", "uniform")
        if self.rotation not in ("hadamard", "uniform"):
            raise ValueError(f"unknown rotation {self.rotation!r}")
        rounds_flags(self.rounds)
        if self.selection not in ("first", "shared"):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass
class ClientEncoding:
    """A client's message plus the intermediate values it was computed from."""

    message: EncodedMessage
    rotated: Optional[RotatedVector] = None
    quantized: Optional[QuantizedVector] = None

    @property
    def scale(self) -> float:
        return self.message.scale


def _rotation_for(kind: str, seed: RotationSeed, d: int, rounds: int):
    if kind == "uniform" and d > MAX_ORACLE_DIM:
        raise ValueError(f"uniform rotation is limited to d <= {MAX_ORACLE_DIM}")
    return make_rotation(kind, seed, d, rounds)


def encode_client(x, cfg: ClientConfig, round: int, global_seed: int) -> ClientEncoding:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("client input must be a finite, non-empty 1-d vector")
    d = x.size
    seed = RotationSeed(global_seed, cfg.client_id, round)
    D = d if cfg.rotation == "uniform" else next_power_of_two(d)
    sid = bits_to_scheme_id(cfg.bits)
    flags = rounds_flags(cfg.rounds)
    if cfg.rotation == "uniform":
        flags |= FLAG_UNIFORM
    if cfg.selection == "shared":
        flags |= FLAG_SHARED_SELECTION
    norm = float(np.linalg.norm(x))
    base = EncodedMessage(cfg.client_id, round, d, D, sid, flags, 0.0, norm)
    if norm == 0.0:
        return ClientEncoding(replace(base, flags=flags | FLAG_ZERO, norm=0.0))
    if sid == 0:
        return ClientEncoding(replace(base, flags=flags | FLAG_DEGENERATE))

    b = scheme_id_to_bits(sid)
    scheme = build_scheme(
        b, D, cfg.scale_mode, cfg.entropy_mode, cfg.selection,
        seed if cfg.selection == "shared" else None,
    )
    r = _rotation_for(cfg.rotation, seed, d, cfg.rounds).forward(x)
    qv = quantize(r, scheme, norm)
    try:
        scale = compute_scale(r, qv, cfg.scale_mode)
    except DegenerateScaleError:
        scale = 0.0
        flags |= FLAG_DEGENERATE
    if scheme.entropy_mode:
        flags |= FLAG_ENTROPY
        payload = entropy_encode(qv)
    else:
        payload = pack_fixed(qv)
    msg = replace(base, flags=flags, scale=scale, payload=payload)
    return ClientEncoding(msg, r, qv)


def client_encode(x, cfg: ClientConfig, round: int, global_seed: int) -> EncodedMessage:
    """Rotate, quantize, scale and serialize one client's vector."""
    return encode_client(x, cfg, round, global_seed).message


def message_quantized(msg: EncodedMessage, global_seed: Optional[int] = None) -> Optional[QuantizedVector]:
    """Decode the level indices of a complete (lossless) message."""
    if not msg.carries_levels:
        return None
    scheme = msg.scheme(global_seed)
    if msg.entropy_mode:
        indices = entropy_decode(msg.payload, scheme.single_level_set, msg.D)
    else:
        indices = unpack_fixed(msg.payload, scheme, msg.D)
    return QuantizedVector(indices, msg.norm, scheme)


def decode_client(
    received: Union[EncodedMessage, Delivery, None],
    global_seed: int,
    d: Optional[int] = None,
    compensate_loss: bool = True,
) -> np.ndarray:
    """One client's estimate ``S * R^-1(q)``; lost coordinates contribute 0.

    With ``compensate_loss`` the header scale is divided by the fraction of the
    expected ``<r, q>`` mass carried by the surviving coordinates, which keeps
    the estimate centred when packets are dropped.
    """
    if received is None:
        if d is None:
            raise ValueError("dimension needed for a lost message")
        return np.zeros(d)
    if isinstance(received, Delivery):
        msg, qv = received.message, received.quantized
    else:
        msg = received
        qv = message_quantized(msg, global_seed)
    if qv is None or msg.scale == 0.0:
        return np.zeros(msg.d)
    scale = msg.scale
    if compensate_loss and qv.lost is not None and qv.lost.any():
        gains = qv.scheme.correlation_gains()
        kept = float(gains[~qv.lost].sum())
        scale = scale * float(gains.sum()) / kept if kept > 0 else 0.0
    if scale == 0.0:
        return np.zeros(msg.d)
    seed = RotationSeed(global_seed, msg.client_id, msg.round)
    rotation = _rotation_for(msg.rotation_kind, seed, msg.d, msg.rounds)
    return scale * rotation.inverse(qv.dequantize())[: msg.d]


def server_decode(
    received: Sequence[Union[EncodedMessage, Delivery, None]],
    global_seed: int,
    d: int,
    compensate_loss: bool = True,
) -> np.ndarray:
    """Average of per-client estimates; missing clients count as zero, divisor stays n."""
    if not received:
        raise ValueError("no clients")
    total = np.zeros(d)
    for item in received:
        total += decode_client(item, global_seed, d, compensate_loss)
    return total / len(received)


@dataclass(frozen=True)
class LossModel:
    kind: str = "none"
    p: float = 0.0
    drops: frozenset = frozenset()

    def __post_init__(self):
        if self.kind not in ("none", "iid", "adversarial"):
            raise ValueError(f"unknown loss model {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"loss probability must be in [0, 1], got {self.p}")
        object.__setattr__(self, "drops", frozenset((int(c), int(s)) for c, s in self.drops))

    @classmethod
    def iid(cls, p: float) -> "LossModel":
        return cls("iid", p)

    @classmethod
    def adversarial(cls, drops) -> "LossModel":
        return cls("adversarial", 0.0, frozenset(drops))

    @property
    def lossless(self) -> bool:
        return self.kind == "none" or (self.kind == "iid" and self.p == 0.0) or (
            self.kind == "adversarial" and not self.drops
        )


def apply_loss(packets: list[Packet], model: LossModel, loss_seed: int) -> list[Packet]:
    """Packets that survive; header packets are subject to loss like any other."""
    if model.kind == "none":
        return list(packets)
    if model.kind == "adversarial":
        return [p for p in packets if (p.message_id >> 32, p.seq) not in model.drops]
    bitgen = np.random.Philox(key=np.array([loss_seed, PURPOSE_LOSS], dtype=np.uint64))
    keep = np.random.Generator(bitgen).random(len(packets)) >= model.p
    return [p for p, k in zip(packets, keep) if k]


def nmse(inputs, estimate) -> float:
    """``||x_avg - estimate||^2 / ((1/n) sum ||x_c||^2)``."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    denom = float(np.mean(np.sum(inputs * inputs, axis=1)))
    if denom == 0.0:
        raise ValueError("all inputs are zero")
    err = inputs.mean(axis=0) - np.asarray(estimate, dtype=np.float64)
    return float(np.dot(err, err)) / denom


def vnmse(x, x_hat) -> float:
    x = np.asarray(x, dtype=np.float64)
    denom = float(np.dot(x, x))
    if denom == 0.0:
        raise ValueError("input vector is zero")
    err = x - np.asarray(x_hat, dtype=np.float64)
    return float(np.dot(err, err)) / denom


@dataclass
class ExperimentConfig:
    clients: int = 10
    dim: int = 1 << 10
    inputs: str = "lognormal_identical"
    repeats: int = 100
    global_seed: int = 0
    loss: LossModel = field(default_factory=LossModel)
    client: ClientConfig = field(default_factory=ClientConfig)
    client_overrides: dict = field(default_factory=dict)
    payload_bytes: int = 1024
    header_copies: int = 1
    compensate_loss: bool = True
    input_vectors: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("need at least one client")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.inputs not in INPUT_KINDS:
            raise ValueError(f"unknown input distribution {self.inputs!r}")
        if self.inputs == "file":
            if self.input_vectors is None:
                raise ValueError("file inputs need input_vectors")
            vecs = np.atleast_2d(np.asarray(self.input_vectors, dtype=np.float64))
            if vecs.shape[1] != self.dim or vecs.shape[0] not in (1, self.clients):
                raise ValueError(f"input vectors of shape {vecs.shape} do not fit n={self.clients}, d={self.dim}")
            self.input_vectors = vecs
        for cid in self.client_overrides:
            if not 0 <= cid < self.clients:
                raise ValueError(f"override for unknown client {cid}")
        for cfg in self.client_configs():
            if cfg.rotation == "uniform" and self.dim > MAX_ORACLE_DIM:
                raise ValueError(f"uniform rotation needs d <= {MAX_ORACLE_DIM}")
            if cfg.entropy_mode and cfg.bits > 1 and not self.loss.lossless:
                raise ValueError("entropy-coded clients cannot run over a lossy transport")
        if not 1 <= self.payload_bytes <= 0xFFFF:
            raise ValueError("payload_bytes must be in 1..65535")
        if self.header_copies < 1:
            raise ValueError("header_copies must be >= 1")

    def client_configs(self) -> list[ClientConfig]:
        out = []
        for c in range(self.clients):
            cfg = replace(self.client, client_id=c)
            if c in self.client_overrides:
                cfg = replace(cfg, **self.client_overrides[c])
            out.append(cfg)
        return out

    def draw_inputs(self, repeat: int) -> np.ndarray:
        n, d = self.clients, self.dim
        if self.inputs == "file":
            return np.broadcast_to(self.input_vectors, (n, d)).copy()
        if self.inputs == "lognormal_identical":
            gen = RotationSeed(self.global_seed, IDENTICAL_INPUT_CLIENT, repeat).generator(PURPOSE_INPUT)
            return np.tile(gen.lognormal(0.0, 1.0, d), (n, 1))
        return np.stack([
            RotationSeed(self.global_seed, c, repeat).generator(PURPOSE_INPUT).lognormal(0.0, 1.0, d)
            for c in range(n)
        ])


@dataclass
class RepeatResult:
    repeat: int
    nmse: float
    bits_per_coord: float
    lost_fraction: float
    vnmse: list[float]


@dataclass
class ExperimentReport:
    repeats: list[RepeatResult]

    @property
    def nmse_per_repeat(self) -> list[float]:
        return [r.nmse for r in self.repeats]

    @property
    def mean_nmse(self) -> float:
        return float(np.mean(self.nmse_per_repeat))

    @property
    def nmse_stderr(self) -> float:
        v = self.nmse_per_repeat
        return float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else float("nan")

    @property
    def mean_vnmse(self) -> list[float]:
        return np.mean([r.vnmse for r in self.repeats], axis=0).tolist()

    @property
    def bits_per_coord(self) -> float:
        return float(np.mean([r.bits_per_coord for r in self.repeats]))

    @property
    def lost_fraction(self) -> float:
        return float(np.mean([r.lost_fraction for r in self.repeats]))

    def summary(self) -> dict:
        return {
            "repeats": len(self.repeats),
            "mean_nmse": self.mean_nmse,
            "nmse_stderr": self.nmse_stderr,
            "mean_vnmse_per_client": self.mean_vnmse,
            "bits_per_coord": self.bits_per_coord,
            "lost_fraction": self.lost_fraction,
        }


def _transmit(enc: ClientEncoding, cfg: ExperimentConfig, client_cfg: ClientConfig, repeat: int):
    """Returns (what the server received, bytes sent, coordinates lost)."""
    msg = enc.message
    if msg.entropy_mode:
        return msg, msg.size_bytes, 0
    scheme = enc.quantized.scheme if enc.quantized is not None else None
    packets = packetize(msg, cfg.payload_bytes, scheme, cfg.header_copies)
    sent = sum(p.size_bytes for p in packets)
    loss_seed = RotationSeed(cfg.global_seed, client_cfg.client_id, repeat).stream_seed
    survivors = apply_loss(packets, cfg.loss, loss_seed)
    try:
        delivery = reassemble(survivors, scheme, cfg.global_seed)
    except MessageLost:
        return None, sent, msg.D
    return delivery, sent, delivery.lost_count


def run_repeat(cfg: ExperimentConfig, repeat: int) -> RepeatResult:
    xs = cfg.draw_inputs(repeat)
    n, d = xs.shape
    total = np.zeros(d)
    sent_bytes, lost, padded = 0, 0, 0
    per_client = []
    for client_cfg, x in zip(cfg.client_configs(), xs):
        enc = encode_client(x, client_cfg, repeat, cfg.global_seed)
        received, sent, lost_c = _transmit(enc, cfg, client_cfg, repeat)
        x_hat = decode_client(received, cfg.global_seed, d, cfg.compensate_loss)
        total += x_hat
        sent_bytes += sent
        lost += lost_c
        padded += enc.message.D
        per_client.append(vnmse(x, x_hat) if np.any(x) else 0.0)
    estimate = total / n
    return RepeatResult(
        repeat=repeat,
        nmse=nmse(xs, estimate),
        bits_per_coord=8.0 * sent_bytes / (n * d),
        lost_fraction=lost / padded,
        vnmse=per_client,
    )


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Repeat encode / packetize / loss / reassemble / decode and collect NMSE.

    Each repeat draws its own inputs and uses rotation seeds
    ``(global_seed, client_id, repeat)``, so repeats are independent and the
    report does not depend on execution order.
    """
    return ExperimentReport([run_repeat(cfg, r) for r in range(cfg.repeats)])
