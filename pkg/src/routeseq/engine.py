"""Encoder/decoder assembly, teacher-forced training, context extraction.

Model variants pair an LSTM or GRU encoder with an RNN or LSTM decoder.
The encoder consumes the [source, destination] token pair (or the binary
task's channel matrix) and its final hidden state becomes the context
vector; the decoder starts from that context (h0 = context, and c0 = 0
for LSTM decoders) and is trained with teacher forcing against the gold
sequence plus a trailing EOS token.

Geometric re-encodings are trained in two phases: first a plain model,
then the context vectors of the training set are fitted with a GMM
(Fisher) or codebook (VLAD), the encoder is frozen, and a fresh decoder
is trained against the encoded contexts.  A Fisher context doubles the
decoder width (mean and variance blocks); VLAD with one centroid keeps
it unchanged.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cells import BinaryHead, Embedding, GruCell, LstmCell, RnnCell, TokenHead
from .encoders import ContextEncoder, fit_context_encoder
from .numeric import GradTape, ParamStore, adam_step, clip_gradients, rmsprop_step
from .rng import SplitMix64
from .routing import RouteDataset

ENCODER_KINDS = ("lstm", "gru")
DECODER_KINDS = ("rnn", "lstm")
CONTEXT_ENCODINGS = ("none", "fisher", "vlad")


@dataclass(frozen=True)
class ModelConfig:
    encoder_kind: str = "gru"
    decoder_kind: str = "rnn"
    hidden_dim: int = 256
    io_mode: str = "token"          # token | binary
    vocab_size: int = 0             # token mode: node count + 1 (EOS)
    bit_width: int = 0              # binary mode: output bits per step
    in_channels: int = 0            # binary mode: input channels
    context_encoding: str = "none"
    gmm_components: int = 1
    descriptor_mode: str = "sequence"  # sequence | timestep
    weighted_assign: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder kind {self.encoder_kind!r}")
        if self.decoder_kind not in DECODER_KINDS:
            raise ValueError(f"unknown decoder kind {self.decoder_kind!r}")
        if self.context_encoding not in CONTEXT_ENCODINGS:
            raise ValueError(f"unknown context encoding {self.context_encoding!r}")
        if self.descriptor_mode not in ("sequence", "timestep"):
            raise ValueError(f"unknown descriptor mode {self.descriptor_mode!r}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")
        if self.gmm_components < 1:
            raise ValueError("gmm_components must be positive")
        if self.io_mode == "token":
            if self.vocab_size < 2:
                raise ValueError("token mode needs a vocabulary (nodes + EOS)")
        elif self.io_mode == "binary":
            if self.bit_width < 1 or self.in_channels < 1:
                raise ValueError("binary mode needs bit_width and in_channels")
        else:
            raise ValueError(f"unknown io mode {self.io_mode!r}")

    @property
    def arch(self) -> str:
        return f"{self.encoder_kind}2{self.decoder_kind}"

    @property
    def context_dim(self) -> int:
        """Decoder hidden size: the (possibly re-encoded) context length."""
        if self.context_encoding == "fisher":
            return 2 * self.gmm_components * self.hidden_dim
        if self.context_encoding == "vlad":
            return self.gmm_components * self.hidden_dim
        return self.hidden_dim

    @property
    def eos_token(self) -> int:
        return self.vocab_size - 1

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TrainLog:
    config_hash: str
    epochs: list[tuple[int, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,mean_nll,seconds"]
        for epoch, nll, seconds in self.epochs:
            lines.append(f"{epoch},{nll!r},{seconds:.3f}")
        return "\n".join(lines) + "\n"


@dataclass
class OptimizerConfig:
    algorithm: str = "adam"   # adam | rmsprop
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    momentum: float = 0.9
    decay: float = 0.9
    eps: float = 1e-8
    clip: tuple[float, float] | None = None

    @staticmethod
    def route_defaults() -> "OptimizerConfig":
        return OptimizerConfig(algorithm="adam", lr=1e-3)

    @staticmethod
    def task_defaults() -> "OptimizerConfig":
        return OptimizerConfig(algorithm="rmsprop", lr=1e-4, clip=(-10.0, 10.0))


class TrainingDiverged(RuntimeError):
    pass


class Seq2SeqModel:
    """Parameter container plus forward/backward wiring for one config."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        D = config.hidden_dim
        Dd = config.context_dim
        store = ParamStore()
        if config.io_mode == "token":
            enc_in = D
            dec_in = D
            Embedding.alloc(store, "enc.emb", config.vocab_size, D)
        else:
            enc_in = config.in_channels
            dec_in = config.bit_width
        enc_prefix = f"enc.{config.encoder_kind}"
        if config.encoder_kind == "lstm":
            LstmCell.alloc(store, enc_prefix, D, enc_in)
        else:
            GruCell.alloc(store, enc_prefix, D, enc_in)
        self._encoder_param_count = store._total
        if config.io_mode == "token":
            Embedding.alloc(store, "dec.emb", config.vocab_size, D)
        dec_prefix = f"dec.{config.decoder_kind}"
        if config.decoder_kind == "lstm":
            LstmCell.alloc(store, dec_prefix, Dd, dec_in)
        else:
            RnnCell.alloc(store, dec_prefix, Dd, dec_in)
        if config.io_mode == "token":
            TokenHead.alloc(store, "head", config.vocab_size, Dd)
        else:
            BinaryHead.alloc(store, "head", config.bit_width, Dd)
        store.freeze()
        self.params = store

        if config.io_mode == "token":
            self.enc_emb = Embedding(store, "enc.emb")
            self.dec_emb = Embedding(store, "dec.emb")
        if config.encoder_kind == "lstm":
            self.encoder = LstmCell(store, enc_prefix, D, enc_in)
        else:
            self.encoder = GruCell(store, enc_prefix, D, enc_in)
        if config.decoder_kind == "lstm":
            self.decoder = LstmCell(store, dec_prefix, Dd, dec_in)
        else:
            self.decoder = RnnCell(store, dec_prefix, Dd, dec_in)
        if config.io_mode == "token":
            self.head = TokenHead(store, "head")
        else:
            self.head = BinaryHead(store, "head")

        self.context_encoder: ContextEncoder | None = None
        self.encoder_frozen = False
        self._context_cache: dict = {}
        self.init_params()

    # -- parameters ---------------------------------------------------------

    def init_params(self) -> None:
        rng = SplitMix64(self.config.seed).derive(0xC0FFEE)
        if self.config.io_mode == "token":
            self.enc_emb.init(rng)
        self.encoder.init(rng)
        if self.config.io_mode == "token":
            self.dec_emb.init(rng)
        self.decoder.init(rng)
        self.head.init(rng)

    @property
    def decoder_region(self) -> slice:
        """Flat-buffer slice holding decoder-side parameters."""
        return slice(self._encoder_param_count, self.params.flat.size)

    def copy_encoder_from(self, other: "Seq2SeqModel") -> None:
        if other.config.encoder_kind != self.config.encoder_kind:
            raise ValueError("encoder kinds differ")
        if other.config.hidden_dim != self.config.hidden_dim:
            raise ValueError("hidden dims differ")
        n = self._encoder_param_count
        self.params.flat[:n] = other.params.flat[:n]

    def attach_context_encoder(self, enc: ContextEncoder) -> None:
        if self.config.context_encoding == "none":
            raise ValueError("model config does not use a context encoding")
        if enc.kind != self.config.context_encoding:
            raise ValueError(
                f"encoder kind {enc.kind!r} != config {self.config.context_encoding!r}"
            )
        if enc.out_dim != self.config.context_dim:
            raise ValueError(
                f"encoded context dim {enc.out_dim} != decoder width "
                f"{self.config.context_dim}"
            )
        self.context_encoder = enc

    def freeze_encoder(self) -> None:
        self.encoder_frozen = True
        self._context_cache.clear()

    # -- encoding -----------------------------------------------------------

    def _encoder_inputs(self, query) -> np.ndarray:
        if self.config.io_mode == "token":
            return self.enc_emb.rows(list(query))
        return np.asarray(query, dtype=np.float64)

    def _run_encoder(self, xs: np.ndarray):
        D = self.config.hidden_dim
        if self.config.encoder_kind == "lstm":
            return self.encoder.forward(xs, np.zeros(D), np.zeros(D))
        return self.encoder.forward(xs, np.zeros(D))

    def encode(self, query) -> np.ndarray:
        """Raw (pre-geometric) context: the encoder's final hidden state."""
        H, _ = self._run_encoder(self._encoder_inputs(query))
        return H[-1].copy()

    def descriptors(self, query) -> np.ndarray:
        """Descriptor set handed to the geometric encoders."""
        H, _ = self._run_encoder(self._encoder_inputs(query))
        return H.copy() if self.config.descriptor_mode == "timestep" else H[-1:].copy()

    def query_context(self, query) -> np.ndarray:
        """Context as the decoder sees it (geometrically encoded if set)."""
        key = None
        if self.encoder_frozen and self.config.io_mode == "token":
            key = tuple(query)
            hit = self._context_cache.get(key)
            if hit is not None:
                return hit
        if self.config.context_encoding == "none":
            ctx = self.encode(query)
        else:
            if self.context_encoder is None:
                raise ValueError("context encoder not attached")
            ctx = self.context_encoder.encode(self.descriptors(query)).values
        if key is not None:
            self._context_cache[key] = ctx
        return ctx

    # -- decoding state helpers ----------------------------------------------

    def decoder_state(self, context: np.ndarray):
        if self.config.decoder_kind == "lstm":
            from .cells import LstmState

            return LstmState(context.copy(), np.zeros(self.config.context_dim))
        from .cells import RnnState

        return RnnState(context.copy())

    # -- losses ---------------------------------------------------------------

    def route_loss(self, nodes: list[int], tape: GradTape) -> float:
        """Teacher-forced mean NLL of one route; accumulates gradients."""
        cfg = self.config
        train_encoder = not self.encoder_frozen
        if cfg.context_encoding != "none" and train_encoder:
            raise ValueError("geometric context requires a frozen encoder")
        s, t = nodes[0], nodes[-1]
        Dd = cfg.context_dim

        if cfg.context_encoding == "none":
            xs_enc = self.enc_emb.rows([s, t])
            Henc, enc_cache = self._run_encoder(xs_enc)
            ctx = Henc[-1]
        else:
            ctx = self.query_context((s, t))
            enc_cache = None

        dec_tokens = nodes
        targets = np.array(nodes[1:] + [cfg.eos_token], dtype=np.int64)
        xs_dec = self.dec_emb.rows(dec_tokens)
        if cfg.decoder_kind == "lstm":
            Hdec, dec_cache = self.decoder.forward(xs_dec, ctx, np.zeros(Dd))
        else:
            Hdec, dec_cache = self.decoder.forward(xs_dec, ctx)
        loss, dH = self.head.nll_loss(Hdec, targets, tape)

        if cfg.decoder_kind == "lstm":
            dX, dh0, _ = self.decoder.backward(dec_cache, dH, tape)
        else:
            dX, dh0 = self.decoder.backward(dec_cache, dH, tape)
        self.dec_emb.backward(tape, dec_tokens, dX)

        if enc_cache is not None and train_encoder:
            dHenc = np.zeros((2, cfg.hidden_dim))
            if cfg.encoder_kind == "lstm":
                dXe, _, _ = self.encoder.backward(enc_cache, dHenc, tape, dh_last=dh0)
            else:
                dXe, _ = self.encoder.backward(enc_cache, dHenc, tape, dh_last=dh0)
            self.enc_emb.backward(tape, [s, t], dXe)
        return loss

    def task_loss(self, channels: np.ndarray, target: np.ndarray,
                  tape: GradTape) -> float:
        """Binary-mode loss: consume the channel matrix, emit target bits."""
        cfg = self.config
        train_encoder = not self.encoder_frozen
        if cfg.context_encoding != "none" and train_encoder:
            raise ValueError("geometric context requires a frozen encoder")
        Dd = cfg.context_dim

        if cfg.context_encoding == "none":
            Henc, enc_cache = self._run_encoder(np.asarray(channels, dtype=np.float64))
            ctx = Henc[-1]
        else:
            ctx = self.query_context(channels)
            enc_cache = None

        T_out = target.shape[0]
        xs_dec = np.zeros((T_out, cfg.bit_width))
        if cfg.decoder_kind == "lstm":
            Hdec, dec_cache = self.decoder.forward(xs_dec, ctx, np.zeros(Dd))
        else:
            Hdec, dec_cache = self.decoder.forward(xs_dec, ctx)
        loss, dH = self.head.bce_loss(Hdec, target, tape)

        if cfg.decoder_kind == "lstm":
            _, dh0, _ = self.decoder.backward(dec_cache, dH, tape)
        else:
            _, dh0 = self.decoder.backward(dec_cache, dH, tape)

        if enc_cache is not None and train_encoder:
            dHenc = np.zeros((channels.shape[0], cfg.hidden_dim))
            if cfg.encoder_kind == "lstm":
                self.encoder.backward(enc_cache, dHenc, tape, dh_last=dh0)
            else:
                self.encoder.backward(enc_cache, dHenc, tape, dh_last=dh0)
        return loss

    def predict_bits(self, channels: np.ndarray, T_out: int) -> np.ndarray:
        """Thresholded binary output for one task instance."""
        ctx = self.query_context(channels)
        state = self.decoder_state(ctx)
        zeros = np.zeros(self.config.bit_width)
        out = np.empty((T_out, self.config.bit_width))
        for k in range(T_out):
            state = self.decoder.step(zeros, state)
            out[k] = self.head.probs(state.h)
        return (out >= 0.5).astype(np.float64)


def _optimizer_step(model: Seq2SeqModel, tape: GradTape, opt: OptimizerConfig,
                    t: int, region: slice | None) -> None:
    if opt.clip is not None:
        clip_gradients(tape, *opt.clip)
    if opt.algorithm == "adam":
        adam_step(model.params, tape, lr=opt.lr, beta1=opt.beta1,
                  beta2=opt.beta2, eps=opt.eps, t=t, region=region)
    elif opt.algorithm == "rmsprop":
        rmsprop_step(model.params, tape, lr=opt.lr, momentum=opt.momentum,
                     decay=opt.decay, eps=opt.eps, region=region)
    else:
        raise ValueError(f"unknown optimizer {opt.algorithm!r}")


def train_routes(
    model: Seq2SeqModel,
    dataset: RouteDataset,
    epochs: int,
    opt: OptimizerConfig | None = None,
    progress=None,
) -> TrainLog:
    """Per-sequence teacher-forced training over seeded epoch shuffles."""
    if not dataset.train:
        raise ValueError("empty train split")
    opt = opt or OptimizerConfig.route_defaults()
    cfg = model.config
    region = model.decoder_region if model.encoder_frozen else None
    log = TrainLog(config_hash=cfg.hash())
    tape = model.params.tape()
    order = list(range(len(dataset.train)))
    snapshot = model.params.flat.copy()
    t = 0
    for epoch in range(1, epochs + 1):
        started = time.time()
        rng = SplitMix64(cfg.seed).derive(0x5EED, epoch)
        rng.shuffle(order)
        total = 0.0
        for idx in order:
            tape.zero()
            loss = model.route_loss(dataset.train[idx].nodes, tape)
            if not math.isfinite(loss):
                model.params.flat[:] = snapshot
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}")
            t += 1
            _optimizer_step(model, tape, opt, t, region)
            total += loss
        mean_nll = total / len(order)
        log.epochs.append((epoch, mean_nll, time.time() - started))
        snapshot[:] = model.params.flat
        if progress is not None:
            progress(epoch, mean_nll)
    return log


def train_task(
    model: Seq2SeqModel,
    instances,
    steps: int,
    opt: OptimizerConfig | None = None,
    log_every: int = 1000,
    progress=None,
) -> TrainLog:
    """Stream training for binary tasks; one update per generated instance."""
    opt = opt or OptimizerConfig.task_defaults()
    region = model.decoder_region if model.encoder_frozen else None
    log = TrainLog(config_hash=model.config.hash())
    tape = model.params.tape()
    snapshot = model.params.flat.copy()
    total, count = 0.0, 0
    started = time.time()
    for t, inst in enumerate(instances, start=1):
        if t > steps:
            break
        tape.zero()
        loss = model.task_loss(inst.input, inst.target, tape)
        if not math.isfinite(loss):
            model.params.flat[:] = snapshot
            raise TrainingDiverged(f"non-finite loss at step {t}")
        _optimizer_step(model, tape, opt, t, region)
        total += loss
        count += 1
        if t % log_every == 0:
            log.epochs.append((t, total / count, time.time() - started))
            snapshot[:] = model.params.flat
            if progress is not None:
                progress(t, total / count)
            total, count = 0.0, 0
            started = time.time()
    return log


def collect_route_contexts(model: Seq2SeqModel, dataset: RouteDataset) -> np.ndarray:
    """Raw descriptors of every training sequence, stacked row-wise."""
    rows = [model.descriptors((r.s, r.t)) for r in dataset.train]
    return np.vstack(rows)


def collect_task_contexts(model: Seq2SeqModel, instances, count: int) -> np.ndarray:
    rows = []
    for k, inst in enumerate(instances):
        if k >= count:
            break
        rows.append(model.descriptors(inst.input))
    return np.vstack(rows)


def fit_route_context_encoder(model: Seq2SeqModel, dataset: RouteDataset,
                              kind: str, K: int, seed: int,
                              weighted: bool = False) -> ContextEncoder:
    contexts = collect_route_contexts(model, dataset)
    if len(contexts) <= K:
        raise ValueError(f"{len(contexts)} contexts cannot fit {K} components")
    return fit_context_encoder(contexts, kind, K, seed, weighted=weighted)


def gradient_suite(eps: float = 1e-4, param_scale: float = 0.7) -> dict[str, float]:
    """Finite-difference errors of every architecture's unrolled loss.

    Small random instances (D <= 8, sequences <= 5).  Parameters are drawn
    uniform(-param_scale, param_scale); the default keeps every gradient
    path well above the resolution floor of central differences without
    saturating the nonlinearities.
    """
    from .numeric import grad_check

    results: dict[str, float] = {}
    routes = [[0, 1, 4, 5], [2, 3, 4], [5, 0, 1]]
    for enc_kind in ENCODER_KINDS:
        for dec_kind in DECODER_KINDS:
            cfg = ModelConfig(
                encoder_kind=enc_kind,
                decoder_kind=dec_kind,
                hidden_dim=4,
                io_mode="token",
                vocab_size=7,
                seed=11,
            )
            model = Seq2SeqModel(cfg)
            r = SplitMix64(123)
            model.params.flat[:] = (
                2.0 * r.uniform_array(model.params.flat.shape) - 1.0
            ) * param_scale

            def f(params, model=model):
                tape = params.tape()
                loss = sum(model.route_loss(nodes, tape) for nodes in routes)
                return loss, tape

            results[cfg.arch] = grad_check(f, model.params, eps=eps)

    cfg = ModelConfig(
        encoder_kind="lstm",
        decoder_kind="lstm",
        hidden_dim=5,
        io_mode="binary",
        bit_width=3,
        in_channels=5,
        seed=12,
    )
    model = Seq2SeqModel(cfg)
    r = SplitMix64(321)
    model.params.flat[:] = (
        2.0 * r.uniform_array(model.params.flat.shape) - 1.0
    ) * param_scale
    channels = SplitMix64(7).bits((4, 5))
    target = SplitMix64(8).bits((3, 3))

    def f_bin(params):
        tape = params.tape()
        loss = model.task_loss(channels, target, tape)
        return loss, tape

    results["binary_head"] = grad_check(f_bin, model.params, eps=eps)
    return results


def build_phase2(base: Seq2SeqModel, enc: ContextEncoder,
                 seed: int | None = None) -> Seq2SeqModel:
    """Fresh-decoder model wired to the frozen base encoder and geo encoding."""
    cfg2 = replace(
        base.config,
        context_encoding=enc.kind,
        gmm_components=enc.gmm.K if enc.kind == "fisher" else enc.codebook.K,
        seed=base.config.seed if seed is None else seed,
    )
    model2 = Seq2SeqModel(cfg2)
    model2.copy_encoder_from(base)
    model2.attach_context_encoder(enc)
    model2.freeze_encoder()
    return model2
