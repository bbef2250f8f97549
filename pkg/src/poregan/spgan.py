"""Slice-conditioned GAN for porous volumes: encoder, generator, discriminator,
their losses and the alternating training loop.

Volumes enter the networks as ``[N, 1, X, Y, Z]`` tensors with SOLID = +1
and VOID = -1.  The mask M picks the ``z = Z // 2`` plane, so a slice is a
``[N, 1, X, Y]`` tensor.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .volume import (
    Slice2D,
    VoxelVolume,
    atomic_write_bytes,
    binarize,
    central_index,
    list_volumes,
    sample_random_subvolumes,
    to_signed,
    volume_io_load,
)

LOG_FLOOR = 1e-12
INIT_STD = 0.02
LEAK = 0.2
NETWORKS = ("encoder", "generator", "discriminator")


@dataclass(frozen=True)
class SpganConfig:
    volume_size: int = 32
    z_dim: int = 64
    h_dim: int | None = None
    base_channels: int = 8
    lr: float = T.DEFAULT_LR
    batch_size: int = 4
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.h_dim is None:
            object.__setattr__(self, "h_dim", self.z_dim)
        n = self.volume_size
        if n < 8 or n & (n - 1):
            raise ValueError(f"volume_size must be a power of two >= 8, got {n}")
        if self.z_dim < 1 or self.h_dim < 1:
            raise ValueError("z_dim and h_dim must be >= 1")
        if self.h_dim >= n * n:
            raise ValueError("h_dim must be smaller than the slice pixel count")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.base_channels < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("base_channels and batch_size must be >= 1, iterations >= 0")

    @property
    def levels(self) -> int:
        """Number of stride-2 stages between 4 and ``volume_size``."""
        return int(math.log2(self.volume_size // 4))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "SpganConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {unknown}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "SpganConfig":
        return cls.from_dict(json.loads(text))


# -- networks ----------------------------------------------------------------

def _normal(rng, shape):
    return rng.normal(0.0, INIT_STD, size=shape)


class Encoder:
    """2D convs (k4 s2 p1, LeakyReLU) down to 4x4, then dense to h_dim."""

    def __init__(self, config: SpganConfig, rng: np.random.Generator):
        b, self.params = config.base_channels, []
        self.convs = []
        c_in = 1
        for i in range(config.levels):
            c_out = b * 2**i
            w = T.Parameter(_normal(rng, (c_out, c_in, 4, 4)), f"encoder.conv{i}.weight")
            bias = T.Parameter(np.zeros(c_out), f"encoder.conv{i}.bias")
            self.convs.append((w, bias))
            c_in = c_out
        self.flat = c_in * 16
        self.fc_w = T.Parameter(_normal(rng, (config.h_dim, self.flat)), "encoder.fc.weight")
        self.fc_b = T.Parameter(np.zeros(config.h_dim), "encoder.fc.bias")
        for w, bias in self.convs:
            self.params += [w, bias]
        self.params += [self.fc_w, self.fc_b]

    def __call__(self, s: T.Tensor) -> T.Tensor:
        x = s
        for w, b in self.convs:
            x = T.leaky_relu(T.conv2d(x, w, b, stride=2, padding=1), LEAK)
        x = T.reshape(x, (x.shape[0], self.flat))
        return T.dense(x, self.fc_w, self.fc_b)


class Generator:
    """Dense projection to a 4^3 map, stride-2 transposed 3D convs, tanh."""

    def __init__(self, config: SpganConfig, rng: np.random.Generator):
        b = config.base_channels
        self.c0 = 8 * b
        in_dim = config.z_dim + config.h_dim
        self.fc_w = T.Parameter(_normal(rng, (self.c0 * 64, in_dim)), "generator.fc.weight")
        self.fc_b = T.Parameter(np.zeros(self.c0 * 64), "generator.fc.bias")
        self.params = [self.fc_w, self.fc_b]
        self.deconvs = []
        c_in = self.c0
        for i in range(config.levels):
            last = i == config.levels - 1
            c_out = 1 if last else max(c_in // 2, b)
            w = T.Parameter(_normal(rng, (c_in, c_out, 4, 4, 4)), f"generator.deconv{i}.weight")
            bias = T.Parameter(np.zeros(c_out), f"generator.deconv{i}.bias")
            self.deconvs.append((w, bias))
            self.params += [w, bias]
            c_in = c_out

    def __call__(self, z: T.Tensor, h: T.Tensor) -> T.Tensor:
        x = T.relu(T.dense(T.concat(z, h, axis=1), self.fc_w, self.fc_b))
        x = T.reshape(x, (x.shape[0], self.c0, 4, 4, 4))
        for i, (w, b) in enumerate(self.deconvs):
            x = T.conv_transpose3d(x, w, b, stride=2, padding=1)
            x = T.tanh(x) if i == len(self.deconvs) - 1 else T.relu(x)
        return x


class Discriminator:
    """3D convs (k4 s2 p1, LeakyReLU) down to 4^3, dense to one logit, sigmoid."""

    def __init__(self, config: SpganConfig, rng: np.random.Generator):
        b, self.params = config.base_channels, []
        self.convs = []
        c_in = 1
        for i in range(config.levels):
            c_out = b * 2**i
            w = T.Parameter(_normal(rng, (c_out, c_in, 4, 4, 4)), f"discriminator.conv{i}.weight")
            bias = T.Parameter(np.zeros(c_out), f"discriminator.conv{i}.bias")
            self.convs.append((w, bias))
            self.params += [w, bias]
            c_in = c_out
        self.flat = c_in * 64
        self.fc_w = T.Parameter(_normal(rng, (1, self.flat)), "discriminator.fc.weight")
        self.fc_b = T.Parameter(np.zeros(1), "discriminator.fc.bias")
        self.params += [self.fc_w, self.fc_b]

    def __call__(self, x: T.Tensor) -> T.Tensor:
        for w, b in self.convs:
            x = T.leaky_relu(T.conv3d(x, w, b, stride=2, padding=1), LEAK)
        x = T.reshape(x, (x.shape[0], self.flat))
        logit = T.dense(x, self.fc_w, self.fc_b)
        return T.sigmoid(T.reshape(logit, (x.shape[0],)))


@dataclass
class SpganModel:
    config: SpganConfig
    encoder: Encoder
    generator: Generator
    discriminator: Discriminator
    optimizers: dict[str, T.AdamState]

    @classmethod
    def initialize(cls, config: SpganConfig, rng: np.random.Generator | None = None) -> "SpganModel":
        if rng is None:
            rng = _init_rng(config.seed)
        return cls(
            config=config,
            encoder=Encoder(config, rng),
            generator=Generator(config, rng),
            discriminator=Discriminator(config, rng),
            optimizers={name: T.AdamState(lr=config.lr) for name in NETWORKS},
        )

    def network(self, name: str):
        return getattr(self, name)

    def parameters(self, *names: str) -> list[T.Parameter]:
        names = names or NETWORKS
        return [p for n in names for p in self.network(n).params]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}


def _seed_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    init_seq, train_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(train_seq)


def _init_rng(seed: int) -> np.random.Generator:
    return _seed_streams(seed)[0]


@contextlib.contextmanager
def trainable(model: SpganModel, *names: str):
    """Let gradients reach only the named networks; every other network is
    held fixed for the duration."""
    selected = model.parameters(*names) if names else []
    for p in model.parameters():
        p.requires_grad = False
    for p in selected:
        p.requires_grad = True
        p.zero_grad()
    try:
        yield selected
    finally:
        for p in model.parameters():
            p.requires_grad = True
            p.zero_grad()


# -- tensor conversions ------------------------------------------------------

def volumes_to_tensor(volumes) -> T.Tensor:
    return T.Tensor(np.stack([to_signed(v.data) for v in volumes])[:, None])


def slices_to_tensor(slices) -> T.Tensor:
    return T.Tensor(np.stack([to_signed(s.data) for s in slices])[:, None])


def mask_central(x: T.Tensor) -> T.Tensor:
    """Differentiable M: the central z-plane of [N, C, X, Y, Z] as [N, C, X, Y]."""
    return x[:, :, :, :, central_index(x.shape[4])]


def _slice_tensor(s) -> T.Tensor:
    if isinstance(s, T.Tensor):
        return s
    if isinstance(s, Slice2D):
        s = [s]
    return slices_to_tensor(s)


# -- model operations --------------------------------------------------------

def encode(model: SpganModel, s) -> T.Tensor:
    s = _slice_tensor(s)
    n = model.config.volume_size
    if s.ndim != 4 or s.shape[1:] != (1, n, n):
        raise ValueError(f"slices must be [N, 1, {n}, {n}], got {s.shape}")
    return model.encoder(s)


def generate(model: SpganModel, z, h) -> T.Tensor:
    z, h = T.as_tensor(z), T.as_tensor(h)
    cfg = model.config
    if z.ndim != 2 or h.ndim != 2 or z.shape[0] != h.shape[0]:
        raise ValueError(f"z {z.shape} and h {h.shape} must be [N, dim] with equal N")
    if z.shape[1] != cfg.z_dim or h.shape[1] != cfg.h_dim:
        raise ValueError(f"expected z_dim={cfg.z_dim}, h_dim={cfg.h_dim}")
    return model.generator(z, h)


def discriminate(model: SpganModel, x) -> T.Tensor:
    x = T.as_tensor(x)
    n = model.config.volume_size
    if x.ndim != 5 or x.shape[1:] != (1, n, n, n):
        raise ValueError(f"volumes must be [N, 1, {n}, {n}, {n}], got {x.shape}")
    return model.discriminator(x)


def sample_noise(model: SpganModel, count: int, rng: np.random.Generator) -> T.Tensor:
    """Draws from the standard normal prior over z."""
    return T.Tensor(rng.standard_normal((count, model.config.z_dim)))


def ae_loss(model: SpganModel, s, z) -> T.Tensor:
    """Squared L2 distance between each slice and the central plane generated
    from it, summed over pixels and averaged over the batch."""
    s = _slice_tensor(s)
    z = T.as_tensor(z)
    if s.shape[0] != z.shape[0]:
        raise ValueError("slice and noise batches differ in size")
    recon = mask_central(generate(model, z, encode(model, s)))
    pixels = s.size // s.shape[0]
    return T.mse(s, recon) * float(pixels)


def _log_not(d: T.Tensor) -> T.Tensor:
    return T.log(1.0 - d, floor=LOG_FLOOR)


@dataclass(frozen=True)
class GanLosses:
    d_loss: T.Tensor
    g_loss: T.Tensor
    d_real: T.Tensor
    d_fake: T.Tensor


def gan_losses(model: SpganModel, x_real, s, z, h=None) -> GanLosses:
    """``d_loss = -[mean log D(x) + mean log(1 - D(G(z, h)))]`` and
    ``g_loss = mean log(1 - D(G(z, h)))``, with ``h = E(s)`` unless given."""
    x_real, z = T.as_tensor(x_real), T.as_tensor(z)
    if h is None:
        h = encode(model, s)
    if x_real.shape[0] != z.shape[0] or h.shape[0] != z.shape[0]:
        raise ValueError("real, slice and noise batches differ in size")
    d_real = discriminate(model, x_real)
    d_fake = discriminate(model, generate(model, z, h))
    g_loss = T.mean(_log_not(d_fake))
    d_loss = -(T.mean(T.log(d_real, floor=LOG_FLOOR)) + g_loss)
    return GanLosses(d_loss, g_loss, d_real, d_fake)


# -- training ----------------------------------------------------------------

LOG_COLUMNS = ("iteration", "ae_loss", "d_loss", "g_loss", "d_real", "d_fake")


@dataclass(frozen=True)
class TrainRecord:
    iteration: int
    ae_loss: float
    d_loss: float
    g_loss: float
    d_real: float
    d_fake: float


@dataclass
class TrainLog:
    records: list[TrainRecord] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.records:
            writer.writerow(
                [r.iteration] + [repr(getattr(r, c)) for c in LOG_COLUMNS[1:]]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            [
                TrainRecord(int(r["iteration"]), *(float(r[c]) for c in LOG_COLUMNS[1:]))
                for r in rows
            ]
        )


def _step(model: SpganModel, network: str, loss: T.Tensor, params) -> None:
    loss.backward()
    T.adam_step(params, model.optimizers[network])


def train_iteration(model: SpganModel, x_batch, rng: np.random.Generator, iteration: int = 0) -> TrainRecord:
    """One pass of the alternating update schedule.

    1. slices s = M(x); 2. z from the prior; 3. encoder on the AE loss;
    4. generator on the AE loss; 5. discriminator on d_loss with
    h = E(s); 6. generator on g_loss.  Each update recomputes its loss
    with the current parameters and holds the other networks fixed.
    """
    x = x_batch if isinstance(x_batch, T.Tensor) else volumes_to_tensor(x_batch)
    s = T.Tensor(mask_central(x).data)
    z = sample_noise(model, x.shape[0], rng)

    with trainable(model, "encoder") as params:
        loss = ae_loss(model, s, z)
        ae_value = loss.item()
        _step(model, "encoder", loss, params)

    with trainable(model, "generator") as params:
        _step(model, "generator", ae_loss(model, s, z), params)

    with trainable(model):
        h = encode(model, s)

    with trainable(model, "discriminator") as params:
        out = gan_losses(model, x, s, z, h=h)
        d_value = out.d_loss.item()
        d_real, d_fake = float(out.d_real.data.mean()), float(out.d_fake.data.mean())
        _step(model, "discriminator", out.d_loss, params)

    with trainable(model, "generator") as params:
        g_loss = T.mean(_log_not(discriminate(model, generate(model, z, h))))
        g_value = g_loss.item()
        _step(model, "generator", g_loss, params)

    return TrainRecord(iteration, ae_value, d_value, g_value, d_real, d_fake)


def load_corpus(corpus) -> list[VoxelVolume]:
    if isinstance(corpus, VoxelVolume):
        return [corpus]
    if isinstance(corpus, (str, Path)):
        path = Path(corpus)
        stems = list_volumes(path) if path.is_dir() else [path]
        return [volume_io_load(s) for s in stems]
    return list(corpus)


def draw_batch(corpus: list[VoxelVolume], size: int, count: int, rng: np.random.Generator) -> list[VoxelVolume]:
    picks = rng.integers(0, len(corpus), size=count)
    return [sample_random_subvolumes(corpus[i], size, 1, rng)[0] for i in picks]


@dataclass
class TrainingState:
    model: SpganModel
    rng: np.random.Generator
    iteration: int = 0
    log: TrainLog = field(default_factory=TrainLog)


def train(
    corpus,
    config: SpganConfig,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    resume_from=None,
    callback=None,
) -> tuple[SpganModel, TrainLog]:
    """Run ``config.iterations`` training iterations on random subvolumes.

    With ``resume_from`` the model, optimizer moments, RNG stream and log
    are restored from a checkpoint and training continues up to
    ``config.iterations`` in total.
    """
    volumes = load_corpus(corpus)
    if not volumes:
        raise ValueError("empty training corpus")
    for v in volumes:
        if min(v.dims) < config.volume_size:
            raise ValueError(f"corpus volume {v.dims} is smaller than volume_size {config.volume_size}")

    if resume_from is not None:
        state = load_training_state(resume_from)
        # only the iteration budget may change across a resume
        if replace(state.model.config, iterations=0) != replace(config, iterations=0):
            raise ValueError("checkpoint config does not match the requested config")
        state.model.config = config
    else:
        init_rng, train_rng = _seed_streams(config.seed)
        state = TrainingState(SpganModel.initialize(config, init_rng), train_rng)

    while state.iteration < config.iterations:
        batch = draw_batch(volumes, config.volume_size, config.batch_size, state.rng)
        record = train_iteration(state.model, batch, state.rng, state.iteration)
        state.log.records.append(record)
        state.iteration += 1
        if callback is not None:
            callback(record)
        if checkpoint_dir is not None and checkpoint_every and state.iteration % checkpoint_every == 0:
            save_training_state(state, checkpoint_dir)
    if checkpoint_dir is not None:
        save_training_state(state, checkpoint_dir)
    return state.model, state.log


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: SpganModel, directory, training: dict | None = None, log: TrainLog | None = None) -> None:
    directory = Path(directory)
    T.save_parameters(directory, model.parameters(), model.optimizers)
    atomic_write_bytes(directory / "config.json", model.config.to_json().encode())
    state = {"iteration": 0, "rng": None} if training is None else training
    atomic_write_bytes(directory / "state.json", (json.dumps(state, indent=2, sort_keys=True) + "\n").encode())
    if log is not None:
        atomic_write_bytes(directory / "trainlog.csv", log.to_csv().encode())


def load_checkpoint(directory) -> SpganModel:
    directory = Path(directory)
    cfg_path = directory / "config.json"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"missing checkpoint config {cfg_path}")
    config = SpganConfig.from_json(cfg_path.read_text())
    model = SpganModel.initialize(config)
    states = T.load_parameters(directory, model.parameters())
    for name in NETWORKS:
        if name in states:
            model.optimizers[name] = states[name]
    return model


def save_training_state(state: TrainingState, directory) -> None:
    training = {"iteration": state.iteration, "rng": state.rng.bit_generator.state}
    save_checkpoint(state.model, directory, training, state.log)


def load_training_state(directory) -> TrainingState:
    directory = Path(directory)
    model = load_checkpoint(directory)
    meta = json.loads((directory / "state.json").read_text())
    rng = np.random.default_rng(model.config.seed)
    if meta["rng"] is not None:
        rng.bit_generator.state = meta["rng"]
    else:
        rng = _seed_streams(model.config.seed)[1]
    log_path = directory / "trainlog.csv"
    log = TrainLog.from_csv(log_path.read_text()) if log_path.is_file() else TrainLog()
    return TrainingState(model, rng, meta["iteration"], log)


# -- synthesis ---------------------------------------------------------------

@dataclass
class Synthesis:
    volumes: list[VoxelVolume]
    central_slices: list[Slice2D]
    l2_distances: list[float]
    mismatch_fractions: list[float]

    def report(self) -> dict:
        return {
            "count": len(self.volumes),
            "l2_distance": self.l2_distances,
            "mismatch_fraction": self.mismatch_fractions,
            "mean_mismatch_fraction": float(np.mean(self.mismatch_fractions)),
        }


def synthesize(checkpoint, s: Slice2D, count: int, seed=None) -> Synthesis:
    """Generate ``count`` binary volumes around the slice ``s``.

    Each result carries its own central slice, the L2 distance of that slice
    to ``s`` over phase labels, and the fraction of mismatched pixels.
    """
    model = checkpoint if isinstance(checkpoint, SpganModel) else load_checkpoint(checkpoint)
    n = model.config.volume_size
    if s.dims != (n, n):
        raise ValueError(f"slice dims {s.dims} do not match checkpoint volume_size {n}")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    h = encode(model, [s])
    out = Synthesis([], [], [], [])
    z_all = rng.standard_normal((count, model.config.z_dim))
    for start in range(0, count, model.config.batch_size):
        z = T.Tensor(z_all[start : start + model.config.batch_size])
        hb = T.Tensor(np.repeat(h.data, z.shape[0], axis=0))
        raw = generate(model, z, hb).data
        for vol_raw in raw[:, 0]:
            vol = binarize(vol_raw, 0.0)
            centre = Slice2D(vol.data[:, :, central_index(n)])
            wrong = int(np.count_nonzero(centre.data != s.data))
            out.volumes.append(vol)
            out.central_slices.append(centre)
            out.l2_distances.append(math.sqrt(wrong))
            out.mismatch_fractions.append(wrong / (n * n))
    return out
